import numpy as np
import pytest

from tfsepnet.audio import WaveClip
from tfsepnet.estimators import LogMelExtractor, TfSepNetClassifier
from tfsepnet.train import ToyDatasetSpec, generate_toy_dataset


@pytest.fixture(scope="module")
def toy():
    ds = generate_toy_dataset(ToyDatasetSpec(samples_per_class=30, n_mels=32,
                                             frames=16, noise=0.05, seed=0))
    return ds.inputs, ds.labels.argmax(axis=1)


class TestLogMelExtractor:
    def test_params_round_trip(self):
        ext = LogMelExtractor(n_mels=128)
        params = ext.get_params()
        assert params["n_mels"] == 128
        clone = LogMelExtractor().set_params(**params)
        assert clone.get_params() == params

    def test_transform_shapes(self, rng):
        ext = LogMelExtractor()
        samples = rng.standard_normal(32000).astype(np.float32) * 0.1
        out = ext.transform([samples, WaveClip(samples, 32000)])
        assert out.shape == (2, 1, 256, 64)
        assert out.dtype == np.float32

    def test_fit_is_noop_returning_self(self):
        ext = LogMelExtractor()
        assert ext.fit(None) is ext


class TestTfSepNetClassifier:
    def test_params_round_trip(self):
        clf = TfSepNetClassifier(tau=16, epochs=3)
        params = clf.get_params()
        clone = TfSepNetClassifier().set_params(**params)
        assert clone.get_params() == params

    def test_fit_predict_learns_toy_classes(self, toy):
        X, y = toy
        clf = TfSepNetClassifier(tau=8, epochs=15, batch_size=30,
                                 warmup_epochs=1, fms_p=0.01, seed=0)
        clf.fit(X, y)
        assert set(clf.classes_) == set(range(10))
        assert len(clf.history_) == 15
        pred = clf.predict(X)
        assert pred.shape == y.shape
        assert (pred == y).mean() > 0.5

    def test_predict_proba_rows_normalized(self, toy):
        X, y = toy
        clf = TfSepNetClassifier(tau=8, epochs=1, warmup_epochs=0, seed=1)
        clf.fit(X[:20], y[:20])
        proba = clf.predict_proba(X[:5])
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)
        assert (proba >= 0).all()

    def test_non_contiguous_labels_mapped_back(self, toy):
        X, y = toy
        keep = np.isin(y, [2, 7])
        clf = TfSepNetClassifier(tau=8, epochs=1, warmup_epochs=0, seed=2)
        clf.fit(X[keep], y[keep] * 10)
        assert set(clf.predict(X[keep])) <= {20, 70}

    def test_unfitted_predict_rejected(self, toy):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            TfSepNetClassifier().predict(toy[0][:1])

    def test_bad_input_shapes_rejected(self, toy):
        X, y = toy
        clf = TfSepNetClassifier()
        with pytest.raises(ValueError):
            clf.fit(X[:, 0, :30], y)     # F not divisible by 16
        with pytest.raises(ValueError):
            clf.fit(X, y[:-1])
