"""
Run artifacts: norms.csv, verify.json and summary.txt.

norms.csv and verify.json depend only on the configuration, seed and thread count;
wall-clock times and the timestamp go to summary.txt.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from datetime import datetime, timezone

from .__about__ import __version__
from .models import NORM_COLUMNS, LemmaCheck, NormSeries

log = logging.getLogger(__name__)

NORMS_FILE = "norms.csv"
VERIFY_FILE = "verify.json"
SUMMARY_FILE = "summary.txt"
NORMS_SCHEMA = 1


def write_norms(path, series: NormSeries, config_hash, seed):
    with open(path, "w", encoding="utf-8", newline="") as norms_file:
        norms_file.write(
            f"# boltzwall norms schema={NORMS_SCHEMA} version={__version__} config={config_hash} seed={seed}\n"
        )
        writer = csv.writer(norms_file, lineterminator="\n")
        writer.writerow(NORM_COLUMNS)
        for row in series.rows():
            writer.writerow([f"{value:.12e}" for value in row])
        if series.decay_rate is not None:
            norms_file.write(
                f"# decay_rate={series.decay_rate:.12e} r2={series.decay_r2:.12e} band={series.decay_band:.12e}\n"
            )
    log.info("wrote %d norm records to %s", len(series), path)


def read_norms(path) -> tuple[dict, NormSeries]:
    """Header fields and the series of a norms.csv file"""
    header = {}
    series = NormSeries()
    with open(path, encoding="utf-8", newline="") as norms_file:
        lines = norms_file.read().splitlines()
    rows = []
    for line in lines:
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, value = item.partition("=")
                if value:
                    header[key] = value
        elif line:
            rows.append(line)
    reader = csv.reader(rows)
    columns = next(reader)
    if tuple(columns) != NORM_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {columns}")
    for row in reader:
        series.append(*(float(value) for value in row))
    if "decay_rate" in header:
        series.decay_rate = float(header["decay_rate"])
        series.decay_r2 = float(header["r2"])
        series.decay_band = float(header["band"])
    return header, series


def write_verify(path, checks, config, experiment):
    document = {
        "version": __version__,
        "config_hash": config.config_hash,
        "experiment": experiment,
        "seed": config.seed,
        "threads": config.threads,
        "lemmas": [check.to_record() for check in checks],
    }
    with open(path, "w", encoding="utf-8") as verify_file:
        json.dump(document, verify_file, sort_keys=True, indent=2)
        verify_file.write("\n")
    log.info("wrote %d lemma records to %s", len(checks), path)


def read_verify(path) -> tuple[dict, list[LemmaCheck]]:
    with open(path, encoding="utf-8") as verify_file:
        document = json.load(verify_file)
    checks = [LemmaCheck.from_record(record) for record in document.pop("lemmas", [])]
    return document, checks


def summary_lines(checks, config_hash, seed, threads, experiment, now=None, elapsed=True):
    now = now or datetime.now(timezone.utc)
    lines = [
        f"boltzwall {__version__}",
        f"experiment: {experiment}",
        f"config: {config_hash}",
        f"seed: {seed}",
        f"threads: {threads}",
        f"generated: {now.strftime('%Y-%m-%dT%H:%M:%SZ')}",
        "",
    ]
    width = max((len(check.lemma_id) for check in checks), default=0)
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        timing = f"{check.elapsed:8.2f}s" if elapsed else "       -"
        lines.append(f"{status}  {check.lemma_id:<{width}}  {timing}")
    passed = sum(1 for check in checks if check.passed)
    lines.append("")
    lines.append(f"{passed}/{len(checks)} checks passed")
    return lines


def write_summary(path, checks, config_hash, seed, threads, experiment, now=None, elapsed=True):
    with open(path, "w", encoding="utf-8") as summary_file:
        summary_file.write("\n".join(summary_lines(checks, config_hash, seed, threads, experiment, now, elapsed)))
        summary_file.write("\n")


def write_artifacts(out_dir, config, experiment, checks, series: NormSeries | None = None, now=None):
    os.makedirs(out_dir, exist_ok=True)
    if series is not None:
        write_norms(os.path.join(out_dir, NORMS_FILE), series, config.config_hash, config.seed)
    write_verify(os.path.join(out_dir, VERIFY_FILE), checks, config, experiment)
    write_summary(
        os.path.join(out_dir, SUMMARY_FILE), checks, config.config_hash, config.seed, config.threads, experiment, now
    )


def rebuild_summary(out_dir, now=None) -> list[LemmaCheck]:
    """Regenerate summary.txt from an existing verify.json; elapsed times are not stored there"""
    meta, checks = read_verify(os.path.join(out_dir, VERIFY_FILE))
    norms_path = os.path.join(out_dir, NORMS_FILE)
    if os.path.exists(norms_path):
        header, _ = read_norms(norms_path)
        if header.get("config") != meta["config_hash"]:
            log.warning("%s and %s come from different configurations", NORMS_FILE, VERIFY_FILE)
    write_summary(
        os.path.join(out_dir, SUMMARY_FILE),
        checks,
        meta["config_hash"],
        meta["seed"],
        meta["threads"],
        meta.get("experiment", "verify"),
        now,
        elapsed=False,
    )
    return checks
