"""HTTP service contracts: classification, species cards, benchmark, fuzzing."""

import io
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from floranet.arch import build_architecture
from floranet.data import synth_dataset
from floranet.model import Model
from floranet.optim import OptimizerConfig
from floranet.serve import (
    ServiceError,
    benchmark,
    classify,
    create_app,
    decode_image,
    load_model,
    load_species_info,
)
from floranet.tensor import Rng
from floranet.train import TrainConfig, save_checkpoint, train


def _png_bytes(rng_seed=0, size=32) -> bytes:
    arr = (Rng(rng_seed).uniform(0, 1, (size, size, 3)) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _class_png(ds, class_idx) -> bytes:
    arr = next(np.asarray(s) for s, c in ds.samples if c == class_idx)
    buf = io.BytesIO()
    Image.fromarray((arr * 255).round().astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    ds = synth_dataset(3, 8, 32, seed=40)
    desc = build_architecture("mini_mobilenet", (32, 32, 3), 3, "gap")
    # 80 epochs gives margins wide enough to survive uint8 quantization
    cfg = TrainConfig(epochs=80, batch_size=32,
                      optimizer=OptimizerConfig("sgd", learning_rate=0.05), seed=41)
    result = train(desc, ds, None, cfg)
    path = tmp_path_factory.mktemp("ckpt") / "mini.ckpt"
    save_checkpoint(path, result.model, ds.class_names, cfg, result.history)
    return path, ds


@pytest.fixture(scope="module")
def handle(trained):
    path, _ = trained
    return load_model(path)


@pytest.fixture(scope="module")
def client(handle):
    return TestClient(create_app(handle), raise_server_exceptions=False)


def test_load_model_exposes_classes(handle):
    assert handle.class_names == ["synth_00", "synth_01", "synth_02"]
    assert handle.input_hw == (32, 32)


def test_load_model_rejects_truncated_checkpoint(tmp_path, trained):
    path, _ = trained
    bad = tmp_path / "broken.ckpt"
    bad.write_bytes(path.read_bytes()[:200])
    with pytest.raises(Exception):
        load_model(bad)


def test_classify_probabilities_sum_to_one(handle):
    out = classify(handle, _png_bytes(1), k=3)
    total = sum(e["probability"] for e in out["top_k"])
    assert total == pytest.approx(1.0, abs=1e-6)  # k == class count here
    probs = [e["probability"] for e in out["top_k"]]
    assert probs == sorted(probs, reverse=True)
    assert out["latency_ms"] > 0


def test_classify_deterministic(handle):
    a = classify(handle, _png_bytes(2), k=3)
    b = classify(handle, _png_bytes(2), k=3)
    assert [e["probability"] for e in a["top_k"]] == \
           [e["probability"] for e in b["top_k"]]


def test_classify_trained_class_recovered(handle, trained):
    _, ds = trained
    for ci in range(3):
        out = classify(handle, _class_png(ds, ci), k=1)
        assert out["top_k"][0]["class_name"] == f"synth_{ci:02d}"


def test_classify_k_validation(handle):
    with pytest.raises(ServiceError):
        classify(handle, _png_bytes(3), k=0)
    with pytest.raises(ServiceError):
        classify(handle, _png_bytes(3), k=4)


def test_decode_rejects_garbage():
    with pytest.raises(ServiceError) as exc:
        decode_image(b"definitely not an image")
    assert exc.value.code == "undecodable_image"


def test_benchmark_statistics(handle):
    stats = benchmark(handle, runs=20, warmup=2)
    assert stats["runs"] == 20
    assert stats["min_ms"] <= stats["avg_ms"] <= stats["max_ms"]
    assert stats["p50_ms"] <= stats["p95_ms"]


# --- HTTP layer --------------------------------------------------------------

def test_healthz(client):
    r = client.get("/healthz")
    assert r.status_code == 200 and r.json() == {"status": "ok"}


def test_classes_endpoint(client):
    r = client.get("/classes")
    assert r.status_code == 200
    assert r.json()["classes"] == ["synth_00", "synth_01", "synth_02"]


def test_model_info(client):
    r = client.get("/model/info")
    body = r.json()
    assert body["architecture"] == "mini_mobilenet"
    assert body["input_size"] == [32, 32]
    assert body["parameters"]["total"] > 0


def test_species_card_fallback_for_synth_classes(client):
    r = client.get("/species/synth_00")
    assert r.status_code == 200
    card = r.json()
    assert card["name"] == "synth_00"
    assert "description" in card


def test_species_unknown_class_404(client):
    r = client.get("/species/orchid")
    assert r.status_code == 404
    body = r.json()
    assert body["code"] == "unknown_class" and "message" in body


def test_species_catalog_covers_all_16_flowers():
    info = load_species_info()
    names = {v["name"] for v in info.values()}
    assert names == {
        "Astilbe", "Bellflower", "Black-eyed Susan", "Calendula",
        "California Poppy", "Carnation", "Common Daisy", "Coreopsis",
        "Daffodil", "Dandelion", "Iris", "Magnolia", "Rose", "Sunflower",
        "Tulip", "Water Lily",
    }
    assert all(v["description"] for v in info.values())


def test_classify_raw_body(client):
    r = client.post("/classify?k=2", content=_png_bytes(4),
                    headers={"content-type": "application/octet-stream"})
    assert r.status_code == 200
    body = r.json()
    assert len(body["top_k"]) == 2
    assert body["model"] == "mini_mobilenet"


def test_classify_multipart(client):
    r = client.post("/classify",
                    files={"file": ("flower.png", _png_bytes(4), "image/png")})
    assert r.status_code == 200
    assert len(r.json()["top_k"]) == 3


def test_classify_error_shapes(client):
    r = client.post("/classify", content=b"junk bytes",
                    headers={"content-type": "application/octet-stream"})
    assert r.status_code == 400
    body = r.json()
    assert body["code"] == "undecodable_image" and "message" in body

    r = client.post("/classify?k=99", content=_png_bytes(5),
                    headers={"content-type": "application/octet-stream"})
    assert r.status_code == 400 and r.json()["code"] == "bad_k"

    r = client.post("/classify", content=b"",
                    headers={"content-type": "application/octet-stream"})
    assert r.status_code == 400 and r.json()["code"] == "empty_body"


def test_fuzzed_uploads_never_crash(client):
    rng = Rng(99)
    for trial in range(25):
        n = int(rng.integers(0, 4000))
        blob = bytes(rng.integers(0, 256, n).astype(np.uint8)) if n else b""
        r = client.post("/classify", content=blob,
                        headers={"content-type": "application/octet-stream"})
        assert r.status_code in (200, 400), trial
        if r.status_code == 400:
            body = r.json()
            assert "code" in body and "message" in body
    assert client.get("/healthz").status_code == 200


def test_100_concurrent_identical_requests(client):
    payload = _png_bytes(6)

    def call(_):
        r = client.post("/classify?k=3", content=payload,
                        headers={"content-type": "application/octet-stream"})
        assert r.status_code == 200
        body = r.json()
        body.pop("latency_ms")  # per-request wall-clock measurement
        return json.dumps(body, sort_keys=True)

    with ThreadPoolExecutor(max_workers=16) as pool:
        bodies = list(pool.map(call, range(100)))
    assert len(set(bodies)) == 1


def test_bench_endpoint(client):
    r = client.get("/bench?runs=10&warmup=1")
    assert r.status_code == 200
    body = r.json()
    assert body["runs"] == 10
    assert body["p50_ms"] <= body["p95_ms"]
