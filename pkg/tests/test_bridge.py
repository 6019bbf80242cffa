import io
import json

import numpy as np
import pytest

from scanalign.bridge import Dataset, evaluate_pair, handle_request, serve
from scanalign.config import RunConfig
from scanalign.geometry import RelativeTransform
from scanalign.synthetic import make_transform

from conftest import build_sequence_dataset


@pytest.fixture
def dataset(tmp_path):
    scans = tmp_path / "scans"
    step = make_transform([0.0, 0.1, 1.0], 1.5, [0.1, 0.0, 0.02])
    build_sequence_dataset(scans, count=3, step=step, n_points=1500)
    from scanalign.config import NormalsParams
    from dataclasses import replace

    cfg = replace(RunConfig(), normals=NormalsParams(alpha=1.0))
    return Dataset(scans, cfg)


def run_lines(dataset, lines, workers=1):
    stdin = io.StringIO("\n".join(lines) + "\n")
    stdout = io.StringIO()
    serve(dataset, stdin=stdin, stdout=stdout, workers=workers)
    return [json.loads(line) for line in stdout.getvalue().strip().splitlines()]


def request(request_id, source, target, q=(1, 0, 0, 0), t=(0, 0, 0), **extra):
    payload = {
        "request_id": request_id,
        "source_scan_id": source,
        "target_scan_id": target,
        "q": list(q),
        "t": list(t),
    }
    payload.update(extra)
    return json.dumps(payload)


class TestDataset:
    def test_scan_ids_sorted(self, dataset):
        assert dataset.scan_ids() == ["000000", "000001", "000002"]

    def test_scan_memoized(self, dataset):
        assert dataset.scan("000000") is dataset.scan("000000")

    def test_index_memoized(self, dataset):
        assert dataset.index("000001") is dataset.index("000001")

    def test_unknown_id_raises(self, dataset):
        from scanalign.bridge import UnknownScanError

        with pytest.raises(UnknownScanError):
            dataset.scan("missing")

    def test_normals_cache_files_preferred(self, tmp_path, dataset):
        # precompute a cache with distinctive params and check it is loaded
        from scanalign.normals import compute_normals, save_normals
        from scanalign.range_image import project

        scan = dataset.scan("000000")
        img = project(scan, dataset.cfg.projection())
        field = compute_normals(scan, img, alpha=0.33, min_valid_neighbors=3, half_window=1)
        save_normals(field, dataset.root / "000000.normals")
        loaded = dataset.normals("000000")
        assert loaded.alpha == 0.33


class TestHandleRequest:
    def test_identity_on_identical_pair(self, tmp_path):
        scans = tmp_path / "static"
        build_sequence_dataset(scans, count=2, n_points=1500)
        from dataclasses import replace
        from scanalign.config import NormalsParams

        ds = Dataset(scans, replace(RunConfig(), normals=NormalsParams(alpha=1.0)))
        response = handle_request(ds, request(1, "000000", "000001"))
        assert response["request_id"] == 1
        assert response["loss_total"] == 0.0
        np.testing.assert_allclose(response["grad_q"], 0.0, atol=1e-12)
        np.testing.assert_allclose(response["grad_t"], 0.0, atol=1e-12)
        assert response["valid_pairs"] > 0

    def test_matches_direct_evaluation_exactly(self, dataset):
        transform = RelativeTransform(
            q=np.array([0.99, 0.01, -0.02, 0.03]), t=np.array([0.05, -0.1, 0.02])
        )
        response = handle_request(
            dataset,
            request(
                "abc", "000001", "000000",
                q=transform.q.tolist(), t=transform.t.tolist(),
                **{"lambda": 1.3, "toggles": {"p2n": True, "n2n": True}},
            ),
        )
        direct = evaluate_pair(
            dataset, "000001", "000000", transform,
            lam=1.3, use_p2n=True, use_n2n=True, max_distance=None,
        )
        assert response["loss_total"] == direct["loss_total"]
        assert response["loss_p2n"] == direct["loss_p2n"]
        assert response["loss_n2n"] == direct["loss_n2n"]
        np.testing.assert_array_equal(response["grad_q"], direct["grad_q"])
        np.testing.assert_array_equal(response["grad_t"], direct["grad_t"])

    def test_unknown_scan_returns_error_record(self, dataset):
        response = handle_request(dataset, request(7, "missing", "000000"))
        assert response["request_id"] == 7
        assert "error" in response

    def test_malformed_json_returns_error_record(self, dataset):
        response = handle_request(dataset, "{not json")
        assert response["request_id"] is None
        assert "error" in response

    def test_missing_field_returns_error_record(self, dataset):
        response = handle_request(dataset, json.dumps({"request_id": 3, "q": [1, 0, 0, 0]}))
        assert response["request_id"] == 3
        assert "error" in response

    def test_toggle_switches_terms(self, dataset):
        p2n_only = handle_request(
            dataset, request(1, "000001", "000000", toggles={"p2n": True, "n2n": False})
        )
        assert p2n_only["loss_total"] == p2n_only["loss_p2n"]
        n2n_only = handle_request(
            dataset, request(2, "000001", "000000", toggles={"p2n": False, "n2n": True})
        )
        assert n2n_only["loss_total"] == n2n_only["loss_n2n"]


class TestServe:
    def test_stream_survives_bad_requests(self, dataset):
        responses = run_lines(
            dataset,
            [
                request(1, "000000", "000001"),
                "garbage",
                request(2, "missing", "000001"),
                request(3, "000001", "000000"),
            ],
        )
        assert len(responses) == 4
        by_id = {r.get("request_id"): r for r in responses}
        assert "error" not in by_id[1]
        assert "error" in by_id[None]
        assert "error" in by_id[2]
        assert "error" not in by_id[3]

    def test_blank_lines_skipped(self, dataset):
        responses = run_lines(dataset, ["", request(1, "000000", "000001"), "  "])
        assert len(responses) == 1

    def test_worker_pool_serves_all(self, dataset):
        lines = [request(i, "000001", "000000") for i in range(8)]
        responses = run_lines(dataset, lines, workers=3)
        assert sorted(r["request_id"] for r in responses) == list(range(8))
        # all workers compute identical values for identical requests
        totals = {r["loss_total"] for r in responses}
        assert len(totals) == 1
