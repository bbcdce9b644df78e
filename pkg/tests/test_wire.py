import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from replyshift.scm import SeedTrail, abduct, counterfactual_predict
from replyshift.seqmodel import GENERATOR_LAYOUT
from replyshift.wire import (
    WireError, WireModel, WirePerspectivePredictor, WireRequestError,
    open_connection, run_conformance,
)

STUB = Path(__file__).parent / "stub_server.py"


def stub_spec(python_exe, extra=""):
    return f"cmd:{python_exe} {STUB} {extra}".strip()


class TestWireModel:
    def test_handshake_and_vocab(self, python_exe):
        model = WireModel(stub_spec(python_exe))
        try:
            assert len(model.vocab) == 14
            assert len(set(model.vocab.specials)) == 4
            assert model.max_ctx == 64
        finally:
            model.close()

    def test_logprobs_normalized_and_deterministic(self, python_exe):
        model = WireModel(stub_spec(python_exe))
        try:
            ctx = [model.vocab.bos, 5, 6]
            a = model.next_logprobs(ctx)
            b = model.next_logprobs(ctx)
            np.testing.assert_array_equal(a.logprobs, b.logprobs)
            assert abs(np.logaddexp.reduce(a.logprobs)) < 1e-9
        finally:
            model.close()

    def test_drift_renormalized_and_recorded(self, python_exe):
        model = WireModel(stub_spec(python_exe, "--drift 5e-4"))
        try:
            dist = model.next_logprobs([model.vocab.bos])
            dist.validate()
            assert model.max_drift != 0.0
            assert abs(model.max_drift) <= 1e-3 + 1e-12
        finally:
            model.close()

    def test_excessive_drift_rejected(self, python_exe):
        model = WireModel(stub_spec(python_exe, "--drift 5e-3"))
        try:
            with pytest.raises(WireError):
                model.next_logprobs([model.vocab.bos])
        finally:
            model.close()

    def test_error_reply_does_not_kill_connection(self, python_exe):
        conn = open_connection(stub_spec(python_exe))
        try:
            with pytest.raises(WireRequestError):
                conn.request({"op": "bogus"})
            reply = conn.request({"op": "logprobs", "ctx": [0]})
            assert len(reply["lp"]) == 14
        finally:
            conn.close()

    def test_perspective_choice_in_bounds(self, python_exe):
        model = WireModel(stub_spec(python_exe))
        try:
            for cands in ([[4]], [[5], [6], [7]], [[8], [9]]):
                idx = model.perspective([4, 5], [6], cands)
                assert 0 <= idx < len(cands)
        finally:
            model.close()

    def test_predictor_wrapper_returns_member(self, python_exe):
        model = WireModel(stub_spec(python_exe))
        try:
            pred = WirePerspectivePredictor(model)
            subset = ["w4", "w5", "w6"]
            assert pred.choose(["w1"], "w2", subset) in subset
        finally:
            model.close()

    def test_pool_of_connections(self, python_exe):
        model = WireModel(stub_spec(python_exe), pool_size=3)
        try:
            dists = [model.next_logprobs([i]) for i in range(6)]
            assert len(dists) == 6
        finally:
            model.close()

    def test_tcp_transport(self, python_exe):
        proc = subprocess.Popen([python_exe, str(STUB), "--tcp", "0"],
                                stdout=subprocess.PIPE, text=True)
        try:
            port = int(proc.stdout.readline().split()[1])
            model = WireModel(f"tcp:127.0.0.1:{port}")
            try:
                dist = model.next_logprobs([0, 1])
                assert abs(np.logaddexp.reduce(dist.logprobs)) < 1e-9
            finally:
                model.close()
        finally:
            proc.terminate()
            proc.wait(timeout=5)


class TestConformance:
    def test_stub_passes_suite(self, python_exe):
        results = run_conformance(stub_spec(python_exe))
        assert results == {check: True for check in results}
        assert set(results) >= {"handshake_schema", "logprobs_shape",
                                "logprobs_normalized", "logprobs_deterministic",
                                "perspective_in_bounds", "error_reply",
                                "recovers_after_error"}


class TestWireAsScmBackend:
    def test_posterior_validity_and_consistency_over_wire(self, python_exe):
        model = WireModel(stub_spec(python_exe))
        try:
            vocab = model.vocab
            regular = [i for i in range(len(vocab)) if i not in vocab.specials]
            rng = np.random.default_rng(61)
            for trial in range(10):
                x = [int(rng.choice(regular)) for _ in range(2)]
                z = [int(rng.choice(regular))]
                y = [int(rng.choice(regular)) for _ in range(rng.integers(1, 4))]
                noise = abduct(model, x, z, y, SeedTrail(7, trial))
                observed = y + [vocab.eos]
                for t in range(len(observed)):
                    ctx = GENERATOR_LAYOUT.context_ids(vocab, x, z, y[:t])
                    lp = model.next_logprobs(ctx).logprobs
                    assert int(np.argmax(lp + noise.row(t))) == observed[t]
                out, truncated = counterfactual_predict(model, x, z, noise,
                                                        temperature=1.0,
                                                        max_len=len(y) + 1)
                assert not truncated
                assert out == observed
        finally:
            model.close()
