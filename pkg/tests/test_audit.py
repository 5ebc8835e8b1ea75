"""Trainer-free replay of threshold and negative-label decisions."""

import json

import numpy as np
import pytest

from semisup.audit import AuditError, run_audit
from semisup.config import DtaConfig, SnlConfig
from semisup.datamodel import DatasetManifest, LabelSpace, ManifestRecord
from semisup.trainer import Trainer

from conftest import tiny_config


def toy_manifest() -> DatasetManifest:
    space = LabelSpace()
    records = [ManifestRecord(f"lab{i}.png", i % 7, "labeled") for i in range(7)]
    records += [ManifestRecord(f"unl{i}.png", None, "unlabeled") for i in range(4)]
    records += [ManifestRecord("ev0.png", 0, "eval")]
    return DatasetManifest(records=records, label_space=space)


def labeled_line(epoch: int, i: int, conf: float) -> dict:
    probs = np.full(7, (1 - conf) / 6)
    probs[i % 7] = conf
    return {"epoch": epoch, "sample_id": f"lab{i}", "probs": probs.tolist()}


def unlabeled_line(epoch: int, i: int, probs) -> dict:
    return {"epoch": epoch, "sample_id": f"unl{i}", "probs": list(probs)}


class TestReplayMechanics:
    def test_constant_trace_converges_geometrically(self):
        # constant per-class confidence -> tau_t = mu^t tau0 + (1-mu^t) conf
        manifest = toy_manifest()
        conf, mu, tau0, epochs = 0.6, 0.9, 0.8, 12
        trace = [labeled_line(e, i, conf) for e in range(epochs) for i in range(7)]
        reports = run_audit(
            trace, manifest, DtaConfig(mu=mu, tau_init=tau0), SnlConfig(enabled=False)
        )
        assert len(reports) == epochs
        for t, rep in enumerate(reports, start=1):
            expected = (mu**t) * tau0 + (1 - mu**t) * conf
            np.testing.assert_allclose(rep["thresholds"], expected, atol=1e-12)

    def test_gate_closed_trace(self):
        # all confidences below thresholds: zero acceptance, library grows
        # only where entries fall at or below delta
        manifest = toy_manifest()
        low = np.array([0.3, 0.3, 0.2, 0.1, 0.06, 0.03, 0.01])
        trace = [unlabeled_line(0, i, low) for i in range(4)]
        reports = run_audit(
            trace, manifest, DtaConfig(tau_init=0.8), SnlConfig(enabled=True, delta=0.05)
        )
        assert reports[0]["accepted_total"] == 0
        assert reports[0]["unlabeled_seen"] == 4
        assert reports[0]["library_size"] == 4
        # entries <= 0.05: classes 5 and 6 only
        assert reports[0]["library_negatives"] == 8

    def test_out_of_order_epochs_rejected(self):
        manifest = toy_manifest()
        trace = [labeled_line(1, 0, 0.5), labeled_line(0, 1, 0.5)]
        with pytest.raises(AuditError, match="out-of-order"):
            run_audit(trace, manifest, DtaConfig(), SnlConfig())

    def test_unknown_sample_rejected(self):
        manifest = toy_manifest()
        trace = [{"epoch": 0, "sample_id": "ghost", "probs": [1 / 7] * 7}]
        with pytest.raises(AuditError, match="ghost"):
            run_audit(trace, manifest, DtaConfig(), SnlConfig())

    def test_eval_sample_rejected(self):
        manifest = toy_manifest()
        trace = [{"epoch": 0, "sample_id": "ev0", "probs": [1 / 7] * 7}]
        with pytest.raises(AuditError, match="eval"):
            run_audit(trace, manifest, DtaConfig(), SnlConfig())

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        path.write_text('{"epoch": 0}\n', encoding="utf-8")
        with pytest.raises(AuditError, match="missing field"):
            run_audit(path, toy_manifest(), DtaConfig(), SnlConfig())

    def test_snl_disabled_library_stays_empty(self):
        manifest = toy_manifest()
        low = np.array([0.3, 0.3, 0.2, 0.1, 0.06, 0.03, 0.01])
        trace = [unlabeled_line(0, i, low) for i in range(4)]
        reports = run_audit(trace, manifest, DtaConfig(tau_init=0.8), SnlConfig(enabled=False))
        assert reports[0]["library_size"] == 0


class TestReplayIdentity:
    def test_replay_matches_trainer_logs(self, tiny_dataset, tmp_path, shared_cache):
        cfg = tiny_config(["train.log_prob_trace=true", "train.epochs=3"], seed=21)
        trainer = Trainer(cfg, tiny_dataset, tmp_path / "run", cache=shared_cache)
        trainer.run()

        reports = run_audit(
            tmp_path / "run" / "probtrace.jsonl",
            tiny_dataset,
            cfg.dta,
            cfg.snl,
            out_path=tmp_path / "audit.jsonl",
        )
        metrics = [
            json.loads(line)
            for line in (tmp_path / "run" / "metrics.jsonl").read_text().strip().split("\n")
        ]
        epoch_logs = [m for m in metrics if m["kind"] == "epoch"]
        assert len(reports) == len(epoch_logs)
        shared = (
            "thresholds",
            "accepted_per_class",
            "seen_per_class",
            "accepted_total",
            "unlabeled_seen",
            "library_size",
            "library_negatives",
        )
        for rep, log in zip(reports, epoch_logs):
            for key in shared:
                assert json.dumps(rep[key]) == json.dumps(log[key]), key
