import numpy as np
import pytest
from conftest import half_textured_cube

from hmua.core import AbundanceMap, HyperCube, InvalidParameter, SegmentationMap, SpectralLibrary
from hmua.homogeneity import NonDecreasingSigmas
from hmua.pipeline import (
    PipelineConfig,
    evaluate_configs,
    expand_grid,
    grid_search,
    hmua_unmix,
    mua_unmix,
    rank_rows,
    segment,
    unmix,
)
from hmua.scalespace import build_operator, uncoarsen
from hmua.slic import SlicParams, slic_segment
from hmua.solver import solve_coarse, solve_regularized
from hmua.synth import SceneSpec, choose_endmembers, generate_abundances, mix_and_corrupt, sre


@pytest.fixture(scope="module")
def scene(small_library):
    spec = SceneSpec(rows=20, cols=20, endmember_count=4, region_size=8, seed=3)
    x = generate_abundances(spec)
    ids = choose_endmembers(small_library, 4, 3)
    cube = mix_and_corrupt(x, small_library, ids, 30.0, 3, shape=(20, 20))
    truth = np.zeros((small_library.count, 400))
    truth[ids] = x.data
    return cube, small_library, AbundanceMap(truth)


def cfg(**kw):
    base = {"sigma0": 5, "refine_sigmas": [3, 2], "max_iters": 150, "lambda_c": 0.001, "lambda": 0.01}
    base.update(kw)
    return PipelineConfig.from_dict(base)


class TestConfig:
    def test_round_trip(self):
        c = cfg(gamma=0.2, tau_homog=0.3, mu=2.0)
        assert PipelineConfig.from_dict(c.to_dict()) == c

    def test_unknown_key(self):
        with pytest.raises(InvalidParameter):
            PipelineConfig.from_dict({"sigma": 5})

    def test_sigmas_must_decrease(self):
        with pytest.raises(NonDecreasingSigmas):
            cfg(sigma0=5, refine_sigmas=[5, 3])
        with pytest.raises(NonDecreasingSigmas):
            cfg(refine_sigmas=[2, 3])

    def test_mua_ignores_refine_order(self):
        assert cfg(mode="mua", refine_sigmas=[9]).mode == "mua"

    def test_bad_mode(self):
        with pytest.raises(InvalidParameter):
            cfg(mode="fast")

    def test_updated(self):
        c = cfg().updated(beta=7.0)
        assert c.solver.beta == 7.0 and c.slic.sigma == 5


class TestMua:
    def test_singletons_beta_zero_is_direct_solve(self, scene):
        cube, lib, _ = scene
        seg = SegmentationMap(np.arange(400).reshape(20, 20))
        c = cfg(beta=0.0, mode="mua")
        with pytest.warns(UserWarning):
            out = mua_unmix(cube, lib, seg, c)
        direct = solve_coarse(cube.data, lib, c.solver.lam, c.solver)
        np.testing.assert_array_equal(out.abundances.data, direct.X.data)

    def test_noiseless_single_atom(self):
        a = np.array([[0.2], [0.5], [0.9]])
        # abundances constant per superpixel, so the coarse estimate is exact as
        # well and the cross-scale term does not bias the fine solve
        x = np.array([[0.3, 0.3, 0.7, 0.7]])
        cube = HyperCube(2, 2, a @ x)
        lib = SpectralLibrary(a)
        seg = SegmentationMap(np.array([[0, 0], [1, 1]]))
        c = cfg(mode="mua", lambda_c=0.0, **{"lambda": 0.0}, max_iters=20000, tol=1e-12)
        out = mua_unmix(cube, lib, seg, c)
        np.testing.assert_allclose(out.abundances.data, x, atol=1e-6)

    def test_pipeline_steps(self, scene):
        cube, lib, _ = scene
        c = cfg(mode="mua")
        seg, _ = segment(cube, c)
        out = mua_unmix(cube, lib, seg, c)
        op = build_operator(seg)
        xd = uncoarsen(out.coarse.X.data, op)
        fine = solve_regularized(cube.data, lib, xd, c.solver.lam, c.solver.beta, c.solver)
        np.testing.assert_array_equal(out.abundances.data, fine.X.data)

    def test_large_beta_pulls_toward_coarse(self, scene):
        cube, lib, _ = scene
        seg, _ = segment(cube, cfg(mode="mua"))
        op = build_operator(seg)
        gaps = []
        for beta in (1.0, 10.0, 100.0):
            out = mua_unmix(cube, lib, seg, cfg(mode="mua", beta=beta, **{"lambda": 0.0}))
            gaps.append(np.linalg.norm(out.abundances.data - uncoarsen(out.coarse.X.data, op)))
        assert gaps[0] > gaps[1] > gaps[2]


class TestHmua:
    def test_diagnostics_schema(self, scene):
        cube, lib, _ = scene
        res = hmua_unmix(cube, lib, cfg())
        for key in ("eta_trace", "K_initial", "K_final", "iters_coarse", "iters_fine", "runtime_s", "K_trace"):
            assert key in res.diagnostics
        assert res.diagnostics["K_final"] == res.segmentation.count
        assert res.eta_trace == res.diagnostics["eta_trace"]

    def test_mua_mode_has_no_eta(self, scene):
        cube, lib, _ = scene
        res = unmix(cube, lib, cfg(mode="mua"))
        assert "eta_trace" not in res.diagnostics and res.eta_trace == []
        with pytest.raises(InvalidParameter):
            hmua_unmix(cube, lib, cfg(mode="mua"))

    def test_empty_refinement_equals_mua(self, scene):
        cube, lib, _ = scene
        h = unmix(cube, lib, cfg(refine_sigmas=[]))
        seg0 = slic_segment(cube, SlicParams(sigma=5))
        m = mua_unmix(cube, lib, seg0, cfg(mode="mua"))
        np.testing.assert_array_equal(h.abundances.data, m.abundances.data)

    def test_homogeneous_scene_equals_mua(self):
        lib = SpectralLibrary(np.array([[0.2, 0.9], [0.6, 0.1], [0.4, 0.4]]))
        cube = HyperCube(8, 8, np.tile([[0.3], [0.5], [0.35]], (1, 64)))
        h = unmix(cube, lib, cfg(sigma0=4))
        m = mua_unmix(cube, lib, slic_segment(cube, SlicParams(sigma=4)), cfg(sigma0=4, mode="mua"))
        assert h.eta_trace == [100.0]
        np.testing.assert_array_equal(h.abundances.data, m.abundances.data)

    def test_mixed_scene_refines(self):
        cube = half_textured_cube()
        rng = np.random.default_rng(0)
        lib = SpectralLibrary(rng.uniform(0.1, 1, (cube.bands, 6)))
        seg, ref = segment(cube, cfg(sigma0=16, refine_sigmas=[8, 4], gamma=1.0))
        assert ref.count_trace[-1] > ref.count_trace[0]
        assert ref.eta_trace[-1] > ref.eta_trace[0]

    def test_round_limit(self):
        cube = half_textured_cube(period=2)
        seg, ref = segment(cube, cfg(sigma0=16, refine_sigmas=[12, 8, 6], gamma=1.0, tau_homog=0.0))
        assert len(ref.eta_trace) <= 4

    def test_deterministic(self, scene):
        cube, lib, _ = scene
        a = unmix(cube, lib, cfg()).abundances.data
        b = unmix(cube, lib, cfg()).abundances.data
        assert a.tobytes() == b.tobytes()


class TestGridSearch:
    def test_single_point(self, scene):
        cube, lib, truth = scene
        rows = grid_search(cube, lib, truth, {"beta": [3.0]}, cfg())
        assert len(rows) == 1
        expected = sre(truth, unmix(cube, lib, cfg(beta=3.0)).abundances)
        assert rows[0]["sre"] == expected

    def test_ranked_descending(self, scene):
        cube, lib, truth = scene
        rows = grid_search(cube, lib, truth, {"lambda": [0.001, 0.01, 0.1], "beta": [1.0, 10.0]}, cfg())
        values = [r["sre"] for r in rows]
        assert values == sorted(values, reverse=True)
        assert len(rows) == 6

    def test_failed_point_recorded(self, scene):
        cube, lib, truth = scene
        rows = grid_search(cube, lib, truth, {"refine_sigmas": [[3], [7]]}, cfg())
        assert rows[-1]["error"] is not None and np.isnan(rows[-1]["sre"])
        assert rows[0]["error"] is None

    def test_tie_order(self):
        rows = [{"sre": 1.0, "grid_point": {"a": 2}}, {"sre": 1.0, "grid_point": {"a": 1}},
                {"sre": float("nan"), "grid_point": {"a": 0}}, {"sre": 2.0, "grid_point": {"a": 3}}]
        assert [r["grid_point"]["a"] for r in rank_rows(rows)] == [3, 1, 2, 0]

    def test_expand_grid(self):
        assert expand_grid({"b": [1, 2], "a": [0]}) == [{"a": 0, "b": 1}, {"a": 0, "b": 2}]
        with pytest.raises(InvalidParameter):
            expand_grid({})
        with pytest.raises(InvalidParameter):
            expand_grid({"a": []})

    def test_workers_give_same_rows(self, scene):
        cube, lib, truth = scene
        points = [cfg(beta=b).to_dict() for b in (1.0, 5.0)]
        serial = evaluate_configs(cube, lib, truth, points, workers=1)
        pooled = evaluate_configs(cube, lib, truth, points, workers=2)
        assert [r["sre"] for r in serial] == [r["sre"] for r in pooled]
