import json
import time

import pytest
from fastapi.testclient import TestClient

from alseq.cli import main as cli_main
from alseq.config import ConfigError, load_config
from alseq.crf.train import TrainConfig
from alseq.embeddings import separated_means, synth_embeddings
from alseq.engine import ALConfig
from alseq.report import build_report, load_summary
from alseq.scoring import AggregationStrategy, UncertaintyMeasure
from alseq.service import RegisteredCorpus, ServiceRegistry, make_app
from alseq.synth import SynthCorpusSpec, make_synthetic_corpus


def write_config(path, **overrides):
    payload = {
        "corpus": {"synthetic": {"n_sentences": 90, "seed": 3}},
        "embeddings": {"synthetic": {"dim": 8, "separation": 6.0, "seed": 2}},
        "split": {"fractions": [0.7, 0.15, 0.15], "seed": 1},
        "al": {
            "m": 2,
            "strategy": "total",
            "measure": "TE",
            "max_iterations": 2,
            "n_repeats": 2,
            "base_seed": 0,
        },
        "train": {"max_iterations": 20},
    }
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if field:
            payload.setdefault(section, {})[field] = value
        else:
            payload[section] = value
    path.write_text(json.dumps(payload))
    return path


class TestConfig:
    def test_valid_config_loads(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "c.json"))
        assert cfg.al.m == 2
        assert cfg.build_al_config().strategy == AggregationStrategy.TOTAL

    def test_negative_m_names_key(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"al.m": -1})
        with pytest.raises(ConfigError, match="al.m"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"al.bogus_knob": 1})
        with pytest.raises(ConfigError, match="bogus_knob"):
            load_config(path)

    def test_conflicting_sources_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        write_config(path, corpus={"path": "x.conll", "synthetic": {"n_sentences": 5}})
        with pytest.raises(ConfigError, match="corpus"):
            load_config(path)


class TestCli:
    def test_run_writes_artifacts(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "out"
        code = cli_main(["run", "--config", str(config), "--out", str(out)])
        assert code == 0
        assert (out / "summary.json").exists()
        assert (out / "run_metadata.json").exists()
        assert (out / "config.json").exists()
        curve = (out / "seed-0" / "curve.csv").read_text().splitlines()
        assert curve[0] == "iteration,sentences,tokens,precision,recall,f1"
        assert len(curve) == 4  # header + init + 2 iterations

    def test_invalid_config_nonzero_exit(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json", **{"al.m": -1})
        code = cli_main(["run", "--config", str(config), "--out", str(tmp_path / "o")])
        assert code != 0
        assert "m" in capsys.readouterr().err

    def test_refuses_nonempty_out_without_force(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "out"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        code = cli_main(["run", "--config", str(config), "--out", str(out)])
        assert code != 0
        assert "force" in capsys.readouterr().err.lower()

    def test_force_allows_reuse(self, tmp_path):
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "out"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        code = cli_main(
            ["run", "--config", str(config), "--out", str(out), "--force"]
        )
        assert code == 0

    def test_ingest(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "ingest"
        code = cli_main(["ingest", "--config", str(config), "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "ingest.json").read_text())
        assert payload["stats"]["n_sentences"] == 90
        assert (out / "corpus.json").exists()

    def test_seed_offset_changes_seeds(self, tmp_path):
        config = write_config(tmp_path / "c.json")
        out1 = tmp_path / "o1"
        out2 = tmp_path / "o2"
        assert cli_main(["run", "--config", str(config), "--out", str(out1)]) == 0
        assert (
            cli_main(
                [
                    "run",
                    "--config",
                    str(config),
                    "--out",
                    str(out2),
                    "--seed-offset",
                    "100",
                ]
            )
            == 0
        )
        s1 = json.loads((out1 / "summary.json").read_text())
        s2 = json.loads((out2 / "summary.json").read_text())
        assert s1["seeds"] == [0, 1]
        assert s2["seeds"] == [100, 101]

    def test_report_cli(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "run1"
        assert cli_main(["run", "--config", str(config), "--out", str(out)]) == 0
        code = cli_main(["report", str(out), "--out", str(tmp_path / "rep")])
        assert code == 0
        text = capsys.readouterr().out
        assert "tTE" in text
        assert (tmp_path / "rep" / "matched_f1_tokens.csv").exists()


class TestReport:
    def test_two_runs_compared(self, tmp_path):
        config_t = write_config(tmp_path / "t.json")
        config_n = write_config(tmp_path / "n.json", **{"al.strategy": "normalized"})
        out_t = tmp_path / "run_t"
        out_n = tmp_path / "run_n"
        assert cli_main(["run", "--config", str(config_t), "--out", str(out_t)]) == 0
        assert cli_main(["run", "--config", str(config_n), "--out", str(out_n)]) == 0
        text = build_report([out_t, out_n], levels=[0.2, 0.5])
        assert "tTE" in text and "nTE" in text
        summary = load_summary(out_t)
        assert summary.label == "tTE"
        mean, sem = summary.mean_f1()
        assert sem is not None  # two repeats

    def test_single_run_sem_undefined(self, tmp_path):
        config = write_config(tmp_path / "c.json", **{"al.n_repeats": 1})
        out = tmp_path / "run"
        assert cli_main(["run", "--config", str(config), "--out", str(out)]) == 0
        text = build_report([out])
        assert "sem n/a" in text


@pytest.fixture(scope="module")
def service_client():
    corpus = make_synthetic_corpus(
        SynthCorpusSpec(n_sentences=70, entity_classes=("X", "Y")), seed=13
    )
    emb = synth_embeddings(
        corpus, separated_means(("X", "Y"), dim=8, separation=6.0, seed=1), seed=2
    )
    config = ALConfig(
        m=2,
        strategy=AggregationStrategy.TOTAL,
        measure=UncertaintyMeasure.TE,
        max_iterations=2,
        train_config=TrainConfig(max_iterations=20),
    )
    registry = ServiceRegistry(
        corpora={
            "demo": RegisteredCorpus(
                corpus, emb, tuple(range(50)), tuple(range(50, 70)), config
            )
        }
    )
    return TestClient(make_app(registry)), corpus


def wait_ready(client, sid, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        view = client.get(f"/sessions/{sid}").json()
        if view["status"] != "training":
            return view
        time.sleep(0.05)
    raise TimeoutError("session stayed in training state")


def label_batch(client, corpus, sid, use_gold=True):
    query = client.get(f"/sessions/{sid}/query").json()
    assert query["status"] == "awaiting_annotation"
    scheme = corpus.label_scheme
    annotations = []
    for item in query["batch"]:
        sent = corpus.sentences[item["sentence_id"]]
        tags = [scheme.tag_name(t) for t in sent.tag_ids] if use_gold else ["O"] * sent.n_tokens
        annotations.append({"sentence_id": item["sentence_id"], "tags": tags})
    return query, annotations


class TestService:
    def test_create_session(self, service_client):
        client, _ = service_client
        response = client.post("/sessions", json={"corpus_id": "demo", "seed": 4})
        assert response.status_code == 201
        view = response.json()
        assert view["status"] == "awaiting_annotation"
        assert view["pending_sentences"] == 4  # 2^2

    def test_unregistered_corpus_404(self, service_client):
        client, _ = service_client
        assert (
            client.post("/sessions", json={"corpus_id": "nope"}).status_code == 404
        )

    def test_full_annotation_cycle(self, service_client):
        client, corpus = service_client
        sid = client.post("/sessions", json={"corpus_id": "demo", "seed": 5}).json()[
            "session_id"
        ]
        query, annotations = label_batch(client, corpus, sid)
        response = client.post(
            f"/sessions/{sid}/annotations",
            json={"idempotency_key": "batch-0", "annotations": annotations},
        )
        assert response.status_code == 200
        assert response.json()["batch_complete"]
        view = wait_ready(client, sid)
        metrics = client.get(f"/sessions/{sid}/metrics").json()
        assert len(metrics["curve"]) == 1
        assert metrics["cost"]["sentences"] == 4
        # Next query batch doubles and carries model suggestions.
        next_query = client.get(f"/sessions/{sid}/query").json()
        assert len(next_query["batch"]) == 8
        assert next_query["batch"][0]["suggested_tags"] is not None

    def test_partial_submission_blocks_retrain(self, service_client):
        client, corpus = service_client
        sid = client.post("/sessions", json={"corpus_id": "demo", "seed": 6}).json()[
            "session_id"
        ]
        _, annotations = label_batch(client, corpus, sid)
        response = client.post(
            f"/sessions/{sid}/annotations",
            json={"idempotency_key": "part", "annotations": annotations[:2]},
        )
        body = response.json()
        assert not body["batch_complete"]
        assert body["remaining"] == 2
        assert client.get(f"/sessions/{sid}").json()["status"] == "awaiting_annotation"

    def test_duplicate_submission_does_not_double_count(self, service_client):
        client, corpus = service_client
        sid = client.post("/sessions", json={"corpus_id": "demo", "seed": 7}).json()[
            "session_id"
        ]
        _, annotations = label_batch(client, corpus, sid)
        body = {"idempotency_key": "dup", "annotations": annotations}
        first = client.post(f"/sessions/{sid}/annotations", json=body)
        wait_ready(client, sid)
        cost_before = client.get(f"/sessions/{sid}/metrics").json()["cost"]
        second = client.post(f"/sessions/{sid}/annotations", json=body)
        assert second.json() == first.json()
        cost_after = client.get(f"/sessions/{sid}/metrics").json()["cost"]
        assert cost_before == cost_after

    def test_invalid_tag_names_422(self, service_client):
        client, corpus = service_client
        sid = client.post("/sessions", json={"corpus_id": "demo", "seed": 8}).json()[
            "session_id"
        ]
        query = client.get(f"/sessions/{sid}/query").json()
        item = query["batch"][0]
        bad = [
            {
                "sentence_id": item["sentence_id"],
                "tags": ["B-Bogus"] + ["O"] * (len(item["tokens"]) - 1),
            }
        ]
        response = client.post(
            f"/sessions/{sid}/annotations",
            json={"idempotency_key": "bad", "annotations": bad},
        )
        assert response.status_code == 422
        assert "B-Bogus" in response.json()["detail"]

    def test_wrong_length_422(self, service_client):
        client, corpus = service_client
        sid = client.post("/sessions", json={"corpus_id": "demo", "seed": 9}).json()[
            "session_id"
        ]
        query = client.get(f"/sessions/{sid}/query").json()
        item = query["batch"][0]
        response = client.post(
            f"/sessions/{sid}/annotations",
            json={
                "idempotency_key": "short",
                "annotations": [{"sentence_id": item["sentence_id"], "tags": ["O"]}],
            },
        )
        assert response.status_code == 422

    def test_diagnostics_endpoint(self, service_client):
        client, corpus = service_client
        response = client.post(
            "/sessions",
            json={"corpus_id": "demo", "seed": 10, "strategy": "total_pos"},
        )
        sid = response.json()["session_id"]
        query, annotations = label_batch(client, corpus, sid)
        client.post(
            f"/sessions/{sid}/annotations",
            json={"idempotency_key": "d0", "annotations": annotations},
        )
        wait_ready(client, sid)
        client.get(f"/sessions/{sid}/query")  # triggers positive-id for the next batch
        diag = client.get(f"/sessions/{sid}/diagnostics").json()
        assert diag["available"]
        assert diag["positive_set_size"] > 0
        assert "cluster_sizes" in diag
