import numpy as np
import pytest

from bihash.encoder import encode
from bihash.io import synth_multilabel
from bihash.projection import project_features
from bihash.trainer import TrainConfig, train
from bihash.types import BilinearHashModel, FeatureTensor, ModelHyper


def random_model(seed=0, d1=4, d2=3, c1=2, c2=2, bits=6, l=3):
    rng = np.random.default_rng(seed)
    hyper = ModelHyper(lam=1e-5, mu=0.1, c1=c1, c2=c2, bits=bits, t1=2, t2=5)
    return BilinearHashModel(rng.standard_normal((d1, c1)),
                             rng.standard_normal((d2, c2)),
                             rng.standard_normal((bits, c1 * c2)),
                             rng.standard_normal((bits, l)), hyper)


class TestEncode:
    def test_zero_input_codes_all_plus_one(self):
        model = random_model()
        codes = encode(FeatureTensor(np.zeros((3, 4, 3))), model)
        np.testing.assert_array_equal(codes.data, np.ones((6, 3), dtype=np.int8))

    def test_batch_equals_concatenated_singles(self):
        model = random_model(seed=1)
        rng = np.random.default_rng(2)
        queries = rng.standard_normal((5, 4, 3))
        batch = encode(FeatureTensor(queries), model)
        singles = [encode(FeatureTensor(queries[i:i + 1]), model).data
                   for i in range(5)]
        np.testing.assert_array_equal(batch.data, np.hstack(singles))

    def test_permutation_equivariant(self):
        model = random_model(seed=3)
        rng = np.random.default_rng(4)
        queries = rng.standard_normal((6, 4, 3))
        perm = rng.permutation(6)
        direct = encode(FeatureTensor(queries[perm]), model)
        base = encode(FeatureTensor(queries), model)
        np.testing.assert_array_equal(direct.data, base.data[:, perm])

    def test_depends_only_on_projected_component(self):
        # a perturbation annihilated by the projections cannot change the code
        rng = np.random.default_rng(5)
        left = np.zeros((4, 2))
        left[:3] = rng.standard_normal((3, 2))  # row 3 is in the null space
        model = random_model(seed=6)
        model = BilinearHashModel(left, model.right_proj, model.hash_weights,
                                  model.label_weights, model.hyper)
        base = rng.standard_normal((2, 4, 3))
        perturbed = base.copy()
        perturbed[:, 3, :] += rng.standard_normal((2, 3)) * 10
        first = encode(FeatureTensor(base), model)
        second = encode(FeatureTensor(perturbed), model)
        np.testing.assert_array_equal(first.data, second.data)

    def test_shape_mismatch(self):
        model = random_model()
        with pytest.raises(ValueError):
            encode(FeatureTensor(np.zeros((1, 5, 3))), model)

    def test_reproduces_training_codes_where_relaxed_fit_agrees(self):
        feats, labels = synth_multilabel(30, 4, 4, 2, labels_per_sample=1,
                                         noise=0.05, seed=7)
        result = train(feats, labels, TrainConfig(bits=8, seed=8), c1=1, c2=1)
        model = result.model
        h = project_features(feats, model.left_proj, model.right_proj)
        relaxed = model.hash_weights @ h
        recoded = encode(feats, model).data
        stored = result.codes.data
        matches = ((np.abs(relaxed) > 1e-12)
                   & (np.sign(relaxed) == stored)).all(axis=0)
        assert matches.any()
        np.testing.assert_array_equal(recoded[:, matches], stored[:, matches])
