import json

import numpy as np
import pytest

from paretomerge import (
    Checkpoint,
    Genotype,
    MergeKind,
    candidate_id,
    evaluate_simulated,
    generate_benchmark,
    load_manifest,
    save_checkpoint,
)
from paretomerge.cli import main


@pytest.fixture
def endpoints(tmp_path):
    rng = np.random.default_rng(0)
    shapes = {"layer.w": (8, 4), "head.b": (16,)}
    s2 = Checkpoint(tensors={n: rng.standard_normal(s).astype(np.float32) for n, s in shapes.items()})
    s1 = Checkpoint(tensors={n: rng.standard_normal(s).astype(np.float32) for n, s in shapes.items()})
    p2, p1 = tmp_path / "s2.pmrg", tmp_path / "s1.pmrg"
    save_checkpoint(s2, p2)
    save_checkpoint(s1, p1)
    return p2, p1


def payload_bytes(path):
    blob = path.read_bytes()
    import struct

    (hlen,) = struct.unpack("<I", blob[4:8])
    return blob[8 + hlen :]


def test_merge_ta_lambda_zero_matches_system2_payload(endpoints, tmp_path, capsys):
    p2, p1 = endpoints
    out = tmp_path / "merged.pmrg"
    rc = main(["merge", "--system2", str(p2), "--system1", str(p1),
               "--op", "ta", "--params", "0.0", "--out", str(out)])
    assert rc == 0
    assert payload_bytes(out) == payload_bytes(p2)
    printed = capsys.readouterr().out
    assert "tensors: 2" in printed and "parameters: 48" in printed


def test_merge_ties_k1_equals_ta(endpoints, tmp_path):
    p2, p1 = endpoints
    out_ta = tmp_path / "ta.pmrg"
    out_ties = tmp_path / "ties.pmrg"
    assert main(["merge", "--system2", str(p2), "--system1", str(p1),
                 "--op", "ta", "--params", "0.5", "--out", str(out_ta)]) == 0
    assert main(["merge", "--system2", str(p2), "--system1", str(p1),
                 "--op", "ties", "--params", "0.5,1.0", "--out", str(out_ties)]) == 0
    assert payload_bytes(out_ta) == payload_bytes(out_ties)


def test_merge_usage_errors(endpoints, tmp_path):
    p2, p1 = endpoints
    out = tmp_path / "x.pmrg"
    base = ["merge", "--system2", str(p2), "--system1", str(p1), "--out", str(out)]
    assert main(base + ["--op", "ta", "--params", "1.5"]) == 2
    assert main(base + ["--op", "ta", "--params", "abc"]) == 2
    assert main(base + ["--op", "dare", "--params", "0.5"]) == 2  # argparse choices


def test_merge_domain_error_on_missing_file(tmp_path):
    rc = main(["merge", "--system2", str(tmp_path / "none.pmrg"),
               "--system1", str(tmp_path / "none.pmrg"),
               "--op", "ta", "--params", "0.5", "--out", str(tmp_path / "o.pmrg")])
    assert rc == 1


def test_calibrate_default_k_and_k2(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["calibrate", "--gen-seed", "0", "--n-items", "50", "--out", str(out)]) == 0
    matrix = json.loads(out.read_text())
    assert len(matrix["model_ids"]) == 10
    assert len(matrix["correct"]) == 10

    out2 = tmp_path / "m2.json"
    assert main(["calibrate", "--gen-seed", "0", "--n-items", "50", "--k", "2",
                 "--out", str(out2)]) == 0
    m2 = json.loads(out2.read_text())
    assert len(m2["model_ids"]) == 2

    bench = generate_benchmark(seed=0, n_items=50)
    assert m2["correct"][0] == [int(c) for c in bench.correctness_vector(0.0)]
    assert m2["correct"][1] == [int(c) for c in bench.correctness_vector(1.0)]


def test_calibrate_save_bench_round_trips(tmp_path):
    out = tmp_path / "m.json"
    bench_path = tmp_path / "bench.json"
    assert main(["calibrate", "--gen-seed", "3", "--n-items", "40",
                 "--save-bench", str(bench_path), "--out", str(out)]) == 0
    from paretomerge import load_benchmark

    reloaded = load_benchmark(bench_path, noise_seed=3)
    assert len(reloaded) == 40
    assert reloaded.items == generate_benchmark(seed=3, n_items=40).items


def test_calibrate_k1_usage_error(tmp_path):
    assert main(["calibrate", "--gen-seed", "0", "--k", "1",
                 "--out", str(tmp_path / "m.json")]) == 2


def test_calibrate_needs_exactly_one_source(tmp_path):
    assert main(["calibrate", "--out", str(tmp_path / "m.json")]) == 2


def test_calibrate_from_records_with_manifest_round_trip(tmp_path):
    bench = generate_benchmark(seed=0, n_items=40)
    records_path = tmp_path / "records.jsonl"
    records_path.write_text("")
    out = tmp_path / "m.json"
    manifest = tmp_path / "pending.jsonl"

    rc = main(["calibrate", "--records", str(records_path), "--k", "4",
               "--out", str(out), "--manifest", str(manifest)])
    assert rc == 1
    pending = [g for _, g in load_manifest(manifest)]
    assert [g.values[0] for g in pending] == pytest.approx([0.0, 1 / 3, 2 / 3, 1.0])

    simulated_records_for(bench, pending, records_path)
    assert main(["calibrate", "--records", str(records_path), "--k", "4",
                 "--out", str(out)]) == 0
    matrix = json.loads(out.read_text())
    assert len(matrix["correct"]) == 4
    # records-mode columns are sorted by item id
    assert matrix["item_ids"] == sorted(bench.item_ids)


def test_sample_subset_disagreement_shortfall_is_domain_error(tmp_path):
    # two items never flip between the endpoint rows: asking for 3 must fail
    matrix_path = tmp_path / "m.json"
    matrix_path.write_text(json.dumps({
        "model_ids": ["m0", "m1"],
        "item_ids": ["i0", "i1", "i2"],
        "correct": [[1, 0, 1], [1, 1, 0]],
        "lengths": [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
    }))
    assert main(["sample-subset", "--matrix", str(matrix_path), "--strategy",
                 "disagreement", "--size", "3", "--out", str(tmp_path / "s.json")]) == 1


def test_sample_subset_flow(tmp_path, capsys):
    matrix_path = tmp_path / "m.json"
    assert main(["calibrate", "--gen-seed", "0", "--out", str(matrix_path)]) == 0
    capsys.readouterr()

    sub = tmp_path / "s.json"
    assert main(["sample-subset", "--matrix", str(matrix_path), "--strategy", "entropy",
                 "--size", "50", "--out", str(sub)]) == 0
    printed = capsys.readouterr().out
    assert "entropy min/median/max" in printed
    data = json.loads(sub.read_text())
    assert len(data["item_ids"]) == 50 and data["strategy"] == "entropy"

    # determinism of the random strategy under a fixed seed
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    for out in (r1, r2):
        assert main(["sample-subset", "--matrix", str(matrix_path), "--strategy", "random",
                     "--size", "20", "--seed", "0", "--out", str(out)]) == 0
    assert r1.read_text() == r2.read_text()

    assert main(["sample-subset", "--matrix", str(matrix_path), "--strategy", "entropy",
                 "--size", "0", "--out", str(tmp_path / "z.json")]) == 2


def evolve_config(tmp_path, out_name="run", **overrides):
    cfg = {
        "search": {"population_size": 8, "generations": 3, "seed": 0},
        "evaluator": {"simulated": {"generator_seed": 0, "n_items": 200}},
        "subset": {"strategy": "entropy", "size": 20, "seed": 0},
        "output_dir": str(tmp_path / out_name),
    }
    cfg.update(overrides)
    path = tmp_path / f"{out_name}-config.json"
    path.write_text(json.dumps(cfg))
    return path, tmp_path / out_name


def test_evolve_simulated_run_dir(tmp_path, capsys):
    cfg_path, out_dir = evolve_config(tmp_path)
    assert main(["evolve", "--config", str(cfg_path)]) == 0
    for name in ("config.json", "history.jsonl", "pareto.json", "subset.json",
                 "matrix.json", "benchmark.json", "front_points.csv"):
        assert (out_dir / name).exists(), name

    history = [json.loads(l) for l in (out_dir / "history.jsonl").read_text().splitlines()]
    assert len(history) == 8 * 4
    assert {h["generation"] for h in history} == {0, 1, 2, 3}

    front = json.loads((out_dir / "pareto.json").read_text())
    accs = [m["accuracy"] for m in front["members"]]
    lens = [m["mean_length"] for m in front["members"]]
    # sorted by fitness.first ascending: accuracy non-increasing, length non-increasing
    assert accs == sorted(accs, reverse=True)
    assert lens == sorted(lens, reverse=True)
    assert "genotype" in capsys.readouterr().out

    plot_rows = (out_dir / "front_points.csv").read_text().strip().splitlines()
    assert plot_rows[0] == "length_reduction_pct,accuracy_pct"
    assert len(plot_rows) == 1 + len(front["members"])
    reductions = [float(r.split(",")[0]) for r in plot_rows[1:]]
    assert reductions == sorted(reductions)


def test_evolve_rerun_is_byte_identical(tmp_path):
    cfg1, out1 = evolve_config(tmp_path, "runA")
    cfg2, out2 = evolve_config(tmp_path, "runB")
    assert main(["evolve", "--config", str(cfg1), "--workers", "1"]) == 0
    assert main(["evolve", "--config", str(cfg2), "--workers", "3"]) == 0
    assert (out1 / "history.jsonl").read_bytes() == (out2 / "history.jsonl").read_bytes()
    assert (out1 / "pareto.json").read_bytes() == (out2 / "pareto.json").read_bytes()


def test_evolve_full_item_set_front_matches_history_pareto(tmp_path):
    from paretomerge import HistoryEntry, ObjectiveVector, extract_pareto

    cfg_path, out_dir = evolve_config(tmp_path, "full", subset=None)
    assert main(["evolve", "--config", str(cfg_path)]) == 0
    history = [json.loads(l) for l in (out_dir / "history.jsonl").read_text().splitlines()]
    entries = [
        HistoryEntry(
            genotype=Genotype(MergeKind(h["genotype"]["kind"]), tuple(h["genotype"]["values"])),
            fitness=ObjectiveVector(h["accuracy"], h["mean_length"]),
            generation=h["generation"],
        )
        for h in history
    ]
    expected = extract_pareto(entries)
    persisted = json.loads((out_dir / "pareto.json").read_text())["members"]
    assert [(m["accuracy"], m["mean_length"]) for m in persisted] == [
        (m.objectives.accuracy, m.objectives.mean_length) for m in expected.members
    ]


def test_evolve_out_flag_overrides_config(tmp_path):
    cfg_path, _ = evolve_config(tmp_path, "ignored")
    override = tmp_path / "elsewhere"
    assert main(["evolve", "--config", str(cfg_path), "--out", str(override)]) == 0
    assert (override / "pareto.json").exists()


def test_evolve_config_validation(tmp_path):
    cfg_path, _ = evolve_config(tmp_path, "bad", evaluator={})
    assert main(["evolve", "--config", str(cfg_path)]) == 2

    cfg_path2, _ = evolve_config(
        tmp_path, "bad2",
        search={"population_size": 7, "generations": 2, "seed": 0},
    )
    assert main(["evolve", "--config", str(cfg_path2)]) == 1  # domain error: odd N


def simulated_records_for(bench, genotypes, path, subset=None):
    """Produce a records file by replaying the simulated benchmark."""
    lines = []
    for g in genotypes:
        outs = evaluate_simulated(bench, g.values[0], subset=subset)
        for o in outs:
            lines.append(json.dumps({
                "candidate_id": candidate_id(g),
                "item_id": o.item_id,
                "correct": o.correct,
                "length": o.length,
            }))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def test_evolve_records_manifest_round_trips(tmp_path):
    bench = generate_benchmark(seed=0, n_items=60)
    records_path = tmp_path / "records.jsonl"
    records_path.write_text("")

    explicit_subset = bench.item_ids[:10]
    cfg = {
        "search": {"population_size": 4, "generations": 1, "seed": 0},
        "evaluator": {"records": {"path": str(records_path)}},
        "subset": {"item_ids": list(explicit_subset)},
        "output_dir": str(tmp_path / "recrun"),
    }
    cfg_path = tmp_path / "rec-config.json"
    cfg_path.write_text(json.dumps(cfg))

    known = []
    for round_no in range(4):
        rc = main(["evolve", "--config", str(cfg_path)])
        if rc == 0:
            break
        assert rc == 1
        manifest = tmp_path / "recrun" / "manifest.jsonl"
        assert manifest.exists()
        pending = [g for _, g in load_manifest(manifest)]
        assert pending, "manifest must name pending candidates"
        known.extend(pending)
        simulated_records_for(bench, known, records_path, subset=explicit_subset)
    else:
        pytest.fail("records evolve did not converge in 4 harness rounds")

    # N*(T+1) = 8 candidates evaluated over two harness rounds
    history = (tmp_path / "recrun" / "history.jsonl").read_text().splitlines()
    assert len(history) == 8


def test_evolve_records_with_strategy_subset_from_calibration(tmp_path):
    bench = generate_benchmark(seed=0, n_items=80)
    records_path = tmp_path / "records.jsonl"
    # pre-populate the calibration grid candidates so subset selection works
    grid_genotypes = [Genotype(MergeKind.TA, (k / 3,)) for k in range(4)]
    simulated_records_for(bench, grid_genotypes, records_path)

    cfg = {
        "search": {"population_size": 4, "generations": 1, "seed": 0},
        "evaluator": {"records": {"path": str(records_path)}},
        "subset": {"strategy": "entropy", "size": 10, "seed": 0, "calibration_k": 4},
        "output_dir": str(tmp_path / "calrun"),
    }
    cfg_path = tmp_path / "cal-config.json"
    cfg_path.write_text(json.dumps(cfg))

    known = list(grid_genotypes)
    for _ in range(4):
        rc = main(["evolve", "--config", str(cfg_path)])
        if rc == 0:
            break
        assert rc == 1
        pending = [g for _, g in load_manifest(tmp_path / "calrun" / "manifest.jsonl")]
        known.extend(pending)
        simulated_records_for(bench, known, records_path)
    else:
        pytest.fail("did not converge")

    subset = json.loads((tmp_path / "calrun" / "subset.json").read_text())
    assert len(subset["item_ids"]) == 10 and subset["strategy"] == "entropy"
    assert (tmp_path / "calrun" / "matrix.json").exists()
    front = json.loads((tmp_path / "calrun" / "pareto.json").read_text())
    assert front["members"]


def test_evolve_records_missing_item_named(tmp_path):
    bench = generate_benchmark(seed=0, n_items=30)
    records_path = tmp_path / "records.jsonl"
    # candidate rows present but covering only one item of the subset
    g = Genotype(MergeKind.TA, (0.5,))
    records_path.write_text(json.dumps({
        "candidate_id": candidate_id(g),
        "item_id": bench.item_ids[0],
        "correct": 1,
        "length": 10.0,
    }) + "\n")

    cfg = {
        "search": {"population_size": 4, "generations": 1, "seed": 0},
        "evaluator": {"records": {"path": str(records_path)}},
        "subset": {"item_ids": [bench.item_ids[0], bench.item_ids[1]]},
        "output_dir": str(tmp_path / "recrun2"),
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["evolve", "--config", str(cfg_path)])
    assert rc == 1  # either missing candidates or missing item, both domain errors


def test_fidelity_csv_shapes(tmp_path, capsys):
    out_dir = tmp_path / "fid"
    assert main(["fidelity", "--gen-seed", "0", "--n-items", "300",
                 "--strategies", "entropy,random", "--sizes", "10,40",
                 "--n-models", "10", "--seeds", "3", "--out", str(out_dir)]) == 0
    rows = (out_dir / "fidelity.csv").read_text().strip().splitlines()
    assert rows[0] == "strategy,size,seed,rho"
    assert len(rows) == 1 + 2 * 2 * 3
    means = (out_dir / "fidelity_mean.csv").read_text().strip().splitlines()
    assert means[0] == "strategy,size,mean_rho"
    assert len(means) == 1 + 4


def test_fidelity_full_size_rho_one(tmp_path):
    out_dir = tmp_path / "fid2"
    assert main(["fidelity", "--gen-seed", "1", "--n-items", "80",
                 "--strategies", "random", "--sizes", "80",
                 "--n-models", "8", "--seeds", "2", "--out", str(out_dir)]) == 0
    rows = (out_dir / "fidelity.csv").read_text().strip().splitlines()[1:]
    assert all(float(r.split(",")[-1]) == pytest.approx(1.0) for r in rows)


def test_fidelity_unknown_strategy_usage_error(tmp_path):
    assert main(["fidelity", "--gen-seed", "0", "--strategies", "bogus",
                 "--sizes", "10", "--out", str(tmp_path / "x")]) == 2


def test_fidelity_outputs_byte_reproducible(tmp_path):
    args = ["fidelity", "--gen-seed", "2", "--n-items", "150",
            "--strategies", "entropy,random", "--sizes", "15,30",
            "--n-models", "8", "--seeds", "4"]
    assert main(args + ["--out", str(tmp_path / "f1")]) == 0
    assert main(args + ["--out", str(tmp_path / "f2")]) == 0
    for name in ("fidelity.csv", "fidelity_mean.csv"):
        assert (tmp_path / "f1" / name).read_bytes() == (tmp_path / "f2" / name).read_bytes()


def test_report_six_benchmark_aggregate(tmp_path, capsys):
    # realistic benchmark sizes; candidate shortens everything except one
    # suite where it runs longer (negative reduction)
    sizes = {"gsm8k": 1319, "math500": 500, "minerva": 272,
             "olympiad": 675, "college": 2818, "aime24": 30}
    cand_spec = {"gsm8k": (0.85, 420.0), "math500": (0.80, 1360.0),
                 "minerva": (0.33, 1170.0), "olympiad": (0.39, 2430.0),
                 "college": (0.48, 950.0), "aime24": (0.13, 3590.0)}
    base_spec = {"gsm8k": (0.79, 630.0), "math500": (0.73, 2570.0),
                 "minerva": (0.20, 3010.0), "olympiad": (0.35, 5810.0),
                 "college": (0.43, 1780.0), "aime24": (0.23, 3000.0)}

    lines = []
    for cid, spec in (("cand", cand_spec), ("base", base_spec)):
        for name, n in sizes.items():
            acc, length = spec[name]
            correct = int(round(acc * n))
            for i in range(n):
                lines.append(json.dumps({
                    "candidate_id": cid,
                    "item_id": f"{name}/q{i}",
                    "correct": 1 if i < correct else 0,
                    "length": length,
                }))
    records = tmp_path / "full.jsonl"
    records.write_text("\n".join(lines) + "\n")

    out_dir = tmp_path / "rep"
    assert main(["report", "--records", str(records), "--candidate", "cand",
                 "--baseline", "base", "--out", str(out_dir)]) == 0
    rows = (out_dir / "report.csv").read_text().strip().splitlines()
    table = {r.split(",")[0]: r.split(",") for r in rows[1:]}

    total = sum(sizes.values())
    pooled_cand = sum(int(round(cand_spec[n][0] * sizes[n])) for n in sizes) / total
    assert float(table["weighted_average"][2]) == pytest.approx(100 * pooled_cand, abs=5e-4)

    # aime24 ran longer than the baseline: negative reduction in the CSV
    assert float(table["aime24"][6]) == pytest.approx(100 * (1 - 3590 / 3000), abs=5e-4)
    assert float(table["aime24"][6]) < 0
    pooled_len_c = sum(cand_spec[n][1] * sizes[n] for n in sizes) / total
    pooled_len_b = sum(base_spec[n][1] * sizes[n] for n in sizes) / total
    assert float(table["weighted_average"][6]) == pytest.approx(
        100 * (1 - pooled_len_c / pooled_len_b), abs=5e-4
    )


def test_report_command(tmp_path, capsys):
    records = tmp_path / "records.jsonl"
    lines = []
    for item, correct, length in [("gsm/q1", 1, 100.0), ("gsm/q2", 1, 200.0),
                                  ("math/q1", 0, 400.0)]:
        lines.append(json.dumps({"candidate_id": "cand", "item_id": item,
                                 "correct": correct, "length": length}))
    for item, correct, length in [("gsm/q1", 1, 300.0), ("gsm/q2", 0, 500.0),
                                  ("math/q1", 1, 800.0)]:
        lines.append(json.dumps({"candidate_id": "base", "item_id": item,
                                 "correct": correct, "length": length}))
    records.write_text("\n".join(lines) + "\n")

    out_dir = tmp_path / "rep"
    assert main(["report", "--records", str(records), "--candidate", "cand",
                 "--baseline", "base", "--out", str(out_dir)]) == 0
    printed = capsys.readouterr().out
    assert "weighted average" in printed
    csv = (out_dir / "report.csv").read_text()
    assert csv.splitlines()[1].startswith("gsm,2,100.0000,150.0000")

    assert main(["report", "--records", str(records), "--candidate", "nope",
                 "--baseline", "base"]) == 1
