"""Tests for seeded instance generation."""

import numpy as np
import pytest

from mirrorcert import io
from mirrorcert.errors import ConfigError, SizeTooLarge
from mirrorcert.instances import generate_instance, make_rng, random_gram, random_simplex_point


class TestRandom:
    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(make_rng(7).uniform(size=5), make_rng(7).uniform(size=5))

    def test_simplex_point(self, rng):
        x = random_simplex_point(rng, 8)
        assert x.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(x > 0)

    def test_gram_is_psd(self, rng):
        gram = random_gram(rng, 10)
        np.testing.assert_array_equal(gram, gram.T)
        assert np.min(np.linalg.eigvalsh(gram)) > -1e-10


class TestGenerateInstance:
    @pytest.mark.parametrize(
        "kind, names",
        [
            ("sinkhorn", ["cost.json", "mu.json", "nu.json"]),
            ("latent_em", ["kernel.json", "obs.json", "init.json"]),
            ("mmd_md", ["gram.json", "target.json", "init.json"]),
        ],
    )
    def test_files(self, tmp_path, kind, names):
        paths = generate_instance(kind, 3, [4, 5], tmp_path)
        assert [p.name for p in paths] == [*names, "instance.json"]
        manifest = io.read_json(tmp_path / "instance.json")
        assert manifest["kind"] == kind
        assert manifest["prng"] == "PCG64"
        assert sorted(manifest["sha256"]) == sorted(names)

    def test_deterministic(self, tmp_path):
        a = generate_instance("sinkhorn", 42, [6], tmp_path / "a", epsilon=0.5)
        b = generate_instance("sinkhorn", 42, [6], tmp_path / "b", epsilon=0.5)
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_single_size_is_square(self, tmp_path):
        generate_instance("sinkhorn", 0, [3], tmp_path)
        assert io.read_array(tmp_path / "cost.json").shape == (3, 3)

    def test_size_cap(self, tmp_path):
        with pytest.raises(SizeTooLarge):
            generate_instance("mmd_md", 0, [501], tmp_path)

    def test_bad_kind_and_size(self, tmp_path):
        with pytest.raises(ConfigError):
            generate_instance("simplex", 0, [3], tmp_path)
        with pytest.raises(ConfigError):
            generate_instance("sinkhorn", 0, [0], tmp_path)
