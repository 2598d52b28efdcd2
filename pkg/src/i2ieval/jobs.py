"""File-level command implementations behind the service and the CLI.

Every job reads inputs from disk, writes all outputs into one directory,
and returns a JSON-ready summary. Two files are written on every run: a
config.json echoing the effective parameters (deterministic, part of the
report surface) and a run_log.json with wall-clock timings (explicitly
excluded from the byte-identical rerun guarantee).
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from . import analysis, distdist, features, fullref, preprocess
from .imagecore import Image, ImageError, read_image, write_image

FULLREF_METRICS = ("mse", "psnr", "ssim", "cwssim", "fsim", "dists")


class UserDataError(Exception):
    """Bad user input: missing files, malformed data, invalid parameters."""


def _write_json(doc: dict, path) -> None:
    analysis.write_text_atomic(json.dumps(doc, indent=2, sort_keys=True) + "\n", path)


def _finish(out_dir: Path, config: dict, timings: dict, summary: dict) -> dict:
    _write_json(config, out_dir / "config.json")
    _write_json({"timings_seconds": timings, "finished_unix": time.time()},
                out_dir / "run_log.json")
    return summary


def _png_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise UserDataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def _read_with_sidecar(path: Path) -> Image:
    sidecar = path.with_suffix(".json")
    try:
        return read_image(path, sidecar=sidecar if sidecar.exists() else None)
    except ImageError as exc:
        raise UserDataError(f"{path}: {exc}") from exc


def job_preprocess(
    input_dir,
    out_dir,
    patch_size: int = 256,
    step: int = 246,
    nonzero_frac: float = 0.99,
    canvas: int = 2224,
    bit_depth: int = 16,
) -> dict:
    t0 = time.perf_counter()
    try:
        cfg = preprocess.PipelineConfig(patch_size, step, nonzero_frac, canvas)
    except ValueError as exc:
        raise UserDataError(str(exc)) from exc
    files = _png_files(input_dir)
    if not files:
        raise UserDataError(f"no input images in {input_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    patches_by_image: dict[str, list] = {}
    for path in files:
        img = _read_with_sidecar(path)
        try:
            patches_by_image[img.meta.source_id] = preprocess.preprocess_image(img, cfg)
        except (ImageError, ValueError) as exc:
            raise UserDataError(f"{path}: {exc}") from exc
    manifest = preprocess.write_patchset(patches_by_image, out_dir, cfg, bit_depth)
    elapsed = time.perf_counter() - t0

    config = {
        "command": "preprocess",
        "input_dir": str(input_dir),
        "out_dir": str(out_dir),
        "patch_size": patch_size,
        "step": step,
        "nonzero_frac": nonzero_frac,
        "canvas": canvas,
        "bit_depth": bit_depth,
    }
    summary = {
        "images": len(files),
        "patches": sum(len(v) for v in patches_by_image.values()),
        "manifest": str(out_dir / "manifest.json"),
        "out_dir": str(out_dir),
    }
    return _finish(out_dir, config, {"total": elapsed}, summary)


def _pair_directories(dir_a, dir_b, pairs_csv, allow_partial) -> list[tuple[str, Path, Path]]:
    """(pair_id, file_a, file_b) triples, ordered by pair_id."""
    if pairs_csv is not None:
        pairs = []
        try:
            with open(pairs_csv, newline="") as fh:
                for line_no, row in enumerate(csv.reader(fh), start=1):
                    if not row or row[0].startswith("#"):
                        continue
                    if len(row) != 2:
                        raise UserDataError(
                            f"{pairs_csv}:{line_no}: expected two columns, got {len(row)}"
                        )
                    a = Path(dir_a) / row[0].strip()
                    b = Path(dir_b) / row[1].strip()
                    for p in (a, b):
                        if not p.exists():
                            raise UserDataError(f"{pairs_csv}:{line_no}: missing file {p}")
                    pair_id = a.stem if a.stem == b.stem else f"{a.stem}__{b.stem}"
                    pairs.append((pair_id, a, b))
        except OSError as exc:
            raise UserDataError(f"{pairs_csv}: {exc}") from exc
        if not pairs:
            raise UserDataError(f"{pairs_csv}: no pairs listed")
        return sorted(pairs)

    names_a = {p.name: p for p in _png_files(dir_a)}
    names_b = {p.name: p for p in _png_files(dir_b)}
    shared = sorted(names_a.keys() & names_b.keys())
    unmatched = sorted(names_a.keys() ^ names_b.keys())
    if unmatched and not allow_partial:
        raise UserDataError(
            "unmatched filenames between directories: " + ", ".join(unmatched)
        )
    if not shared:
        raise UserDataError("no filename-matched pairs between the directories")
    return [(Path(n).stem, names_a[n], names_b[n]) for n in shared]


def _metric_params(metrics: list[str]) -> dict:
    params = {}
    if "ssim" in metrics:
        p = fullref.SsimParams()
        params["ssim"] = {
            "window": p.window, "gaussian_sigma": p.gaussian_sigma,
            "k1": p.k1, "k2": p.k2, "data_range": p.data_range,
        }
    if "cwssim" in metrics:
        p = fullref.CwSsimParams()
        params["cwssim"] = {
            "scales": p.scales, "orientations": p.orientations,
            "window": p.window, "stabilizer": p.stabilizer,
        }
    if "fsim" in metrics:
        p = fullref.FsimParams()
        params["fsim"] = {
            "pc_scales": p.pc_scales, "pc_orientations": p.pc_orientations,
            "t1": p.t1, "t2": p.t2,
        }
    if "dists" in metrics:
        params["dists"] = {"c1": features.DISTS_C1, "c2": features.DISTS_C2}
    return params


def job_eval_fullref(
    dir_a,
    dir_b,
    out_dir,
    metrics: list[str] | None = None,
    pairs_csv=None,
    allow_partial: bool = False,
    acts_a=None,
    acts_b=None,
) -> dict:
    t0 = time.perf_counter()
    metrics = list(metrics) if metrics else ["mse", "psnr", "ssim"]
    unknown = [m for m in metrics if m not in FULLREF_METRICS]
    if unknown:
        raise UserDataError(
            f"unknown metrics {unknown}; choose from {list(FULLREF_METRICS)}"
        )
    mla_a = mla_b = None
    if "dists" in metrics:
        if acts_a is None or acts_b is None:
            raise UserDataError(
                "dists needs multi-layer activations for both sides; run the "
                "extractor first and pass acts_a/acts_b manifest directories"
            )
        try:
            mla_a = features.load_multilayer(acts_a)
            mla_b = features.load_multilayer(acts_b)
        except features.ActivationFileError as exc:
            raise UserDataError(str(exc)) from exc

    pairs = _pair_directories(dir_a, dir_b, pairs_csv, allow_partial)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for pair_id, file_a, file_b in pairs:
        img_a = _read_with_sidecar(file_a)
        img_b = _read_with_sidecar(file_b)
        values = {}
        try:
            if "mse" in metrics:
                values["mse"] = fullref.mse(img_a, img_b)
            if "psnr" in metrics:
                values["psnr"] = fullref.psnr(img_a, img_b)
            if "ssim" in metrics:
                values["ssim"] = fullref.ssim(img_a, img_b)
            if "cwssim" in metrics:
                values["cwssim"] = fullref.cw_ssim(img_a, img_b)
            if "fsim" in metrics:
                values["fsim"] = fullref.fsim(img_a, img_b)
            if "dists" in metrics:
                values["dists"] = _dists_for_pair(mla_a, mla_b, file_a.stem, file_b.stem)
        except (ImageError, ValueError) as exc:
            raise UserDataError(f"pair {pair_id}: {exc}") from exc
        rows.append(analysis.ReportRow(pair_id, values))

    provenance = {"dir_a": str(dir_a), "dir_b": str(dir_b)}
    if acts_a is not None:
        provenance["acts_a"] = str(acts_a)
        provenance["acts_b"] = str(acts_b)
    report = analysis.MetricReport(tuple(rows), params=_metric_params(metrics),
                                   provenance=provenance)
    analysis.write_text_atomic(analysis.report_to_json(report), out_dir / "report.json")
    analysis.write_text_atomic(analysis.report_to_csv(report), out_dir / "report.csv")

    summary = _summarise_report(report, metrics)
    elapsed = time.perf_counter() - t0
    config = {
        "command": "eval-fullref",
        "dir_a": str(dir_a),
        "dir_b": str(dir_b),
        "out_dir": str(out_dir),
        "metrics": sorted(metrics),
        "pairs_csv": None if pairs_csv is None else str(pairs_csv),
        "allow_partial": allow_partial,
        "acts_a": None if acts_a is None else str(acts_a),
        "acts_b": None if acts_b is None else str(acts_b),
        "params": _metric_params(metrics),
    }
    out = {
        "pairs": len(rows),
        "report_json": str(out_dir / "report.json"),
        "report_csv": str(out_dir / "report.csv"),
        "summary": summary,
    }
    return _finish(out_dir, config, {"total": elapsed}, out)


def _dists_for_pair(mla_a, mla_b, stem_a: str, stem_b: str) -> float:
    try:
        ia = mla_a.ids.index(stem_a)
        ib = mla_b.ids.index(stem_b)
    except ValueError as exc:
        raise UserDataError(
            f"no activations for pair ({stem_a}, {stem_b}); re-run the extractor "
            "over these directories"
        ) from exc
    return features.dists(mla_a.select(ia), mla_b.select(ib))


def _summarise_report(report, metrics: list[str]) -> dict:
    summary = {"n_pairs": len(report.rows), "metrics": {}}
    flagged = []
    for name in sorted(metrics):
        column = report.column(name)
        finite = column[np.isfinite(column)]
        entry = {
            "nonfinite": int(column.size - finite.size),
            "mean": float(finite.mean()) if finite.size else None,
            "std": float(finite.std()) if finite.size else None,
        }
        summary["metrics"][name] = entry
    if "fsim" in metrics:
        flagged = [r.pair_id for r in report.rows if r.values["fsim"] > 1.0]
    summary["fsim_above_1"] = flagged
    return summary


def job_eval_dist(
    adapted_acts,
    target_acts,
    out_dir,
    source_acts=None,
    metrics: list[str] | None = None,
    precision: str = "f64",
    subsets: int = 50,
    subset_size: int = 100,
    seed: int = 0,
    precision_study: bool = False,
) -> dict:
    t0 = time.perf_counter()
    metrics = list(metrics) if metrics else ["fid", "kid"]
    unknown = [m for m in metrics if m not in ("fid", "kid")]
    if unknown:
        raise UserDataError(f"unknown metrics {unknown}; choose from ['fid', 'kid']")
    try:
        prec = distdist.Precision(precision)
    except ValueError as exc:
        raise UserDataError(f"precision must be 'f32' or 'f64', got {precision!r}") from exc

    def load(path):
        try:
            return features.load_activations(path)
        except features.ActivationFileError as exc:
            raise UserDataError(str(exc)) from exc

    adapted = load(adapted_acts)
    target = load(target_acts)
    source = load(source_acts) if source_acts is not None else None

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result: dict = {
        "precision": prec.value,
        "activation_counts": {"adapted": adapted.n, "target": target.n},
    }
    timings: dict = {}

    try:
        if "fid" in metrics:
            t_fid = time.perf_counter()
            result["fid"] = {"adapted": distdist.fid_from_sets(adapted, target, prec)}
            timings["fid"] = time.perf_counter() - t_fid
        if "kid" in metrics:
            cfg = distdist.KidConfig(subsets=subsets, subset_size=subset_size, seed=seed)
            t_kid = time.perf_counter()
            est = distdist.kid_subsampled(adapted, target, cfg)
            timings["kid"] = time.perf_counter() - t_kid
            result["kid"] = {
                "adapted": {
                    "mean": est.mean,
                    "std": est.std,
                    "per_subset": list(est.per_subset),
                    "degenerate_subsets": est.degenerate,
                },
                "subsets": subsets,
                "subset_size": subset_size,
                "seed": seed,
                "sampling": "independent-per-set",
            }
        if source is not None:
            result["activation_counts"]["source"] = source.n
            if "fid" in metrics:
                delta = distdist.baseline_delta(source, adapted, target, "fid", prec)
                result["fid"].update(
                    baseline=delta.baseline, improved=delta.improved
                )
            if "kid" in metrics:
                cfg = distdist.KidConfig(subsets=subsets, subset_size=subset_size, seed=seed)
                delta = distdist.baseline_delta(
                    source, adapted, target, "kid", prec, kid_cfg=cfg
                )
                result["kid"]["baseline"] = {"mean": delta.baseline}
                result["kid"]["improved"] = delta.improved
        if precision_study:
            study = distdist.precision_study(adapted, target)
            timings["precision_study_f32"] = study.pop("seconds_f32")
            timings["precision_study_f64"] = study.pop("seconds_f64")
            result["precision_study"] = study
    except ValueError as exc:
        raise UserDataError(str(exc)) from exc

    _write_json(result, out_dir / "dist.json")
    config = {
        "command": "eval-dist",
        "adapted_acts": str(adapted_acts),
        "target_acts": str(target_acts),
        "source_acts": None if source_acts is None else str(source_acts),
        "out_dir": str(out_dir),
        "metrics": sorted(metrics),
        "precision": prec.value,
        "subsets": subsets,
        "subset_size": subset_size,
        "seed": seed,
        "precision_study": precision_study,
    }
    timings["total"] = time.perf_counter() - t0
    summary = dict(result)
    summary["result_json"] = str(out_dir / "dist.json")
    return _finish(out_dir, config, timings, summary)


def job_register(
    moving_dir,
    fixed_dir,
    out_dir,
    max_shift: int = 10,
    crop_margin: int = 5,
    bit_depth: int = 16,
) -> dict:
    t0 = time.perf_counter()
    pairs = _pair_directories(moving_dir, fixed_dir, None, False)
    out_dir = Path(out_dir)
    registered_dir = out_dir / "registered"
    registered_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for pair_id, moving_path, fixed_path in pairs:
        moving = _read_with_sidecar(moving_path)
        fixed = _read_with_sidecar(fixed_path)
        try:
            shift, registered = analysis.register_translation(moving, fixed, max_shift)
            before = fullref.ssim(fixed, moving)
            after = fullref.ssim(
                analysis.crop_border(fixed, crop_margin),
                analysis.crop_border(registered, crop_margin),
            )
        except (ImageError, ValueError) as exc:
            raise UserDataError(f"pair {pair_id}: {exc}") from exc
        write_image(registered, registered_dir / moving_path.name, bit_depth)
        rows.append(
            {
                "pair_id": pair_id,
                "dx": shift.dx,
                "dy": shift.dy,
                "ssim_before": before,
                "ssim_after_crop": after,
            }
        )

    shifts_doc = {
        "format": "registration-shifts-v1",
        "max_shift": max_shift,
        "crop_margin": crop_margin,
        "rows": rows,
    }
    _write_json(shifts_doc, out_dir / "shifts.json")
    config = {
        "command": "register",
        "moving_dir": str(moving_dir),
        "fixed_dir": str(fixed_dir),
        "out_dir": str(out_dir),
        "max_shift": max_shift,
        "crop_margin": crop_margin,
        "bit_depth": bit_depth,
    }
    summary = {
        "pairs": len(rows),
        "shifts_json": str(out_dir / "shifts.json"),
        "registered_dir": str(registered_dir),
        "improved_pairs": sum(1 for r in rows if r["ssim_after_crop"] > r["ssim_before"]),
    }
    return _finish(out_dir, config, {"total": time.perf_counter() - t0}, summary)


def job_correlate(report_json, out_dir) -> dict:
    t0 = time.perf_counter()
    try:
        report = analysis.load_report_json(report_json)
        matrix = analysis.correlation_matrix(report)
    except ValueError as exc:
        raise UserDataError(str(exc)) from exc
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_text_atomic(analysis.matrix_to_csv(matrix), out_dir / "matrix.csv")
    analysis.write_text_atomic(analysis.matrix_to_json(matrix), out_dir / "matrix.json")
    config = {
        "command": "correlate",
        "report": str(report_json),
        "out_dir": str(out_dir),
    }
    summary = {
        "metrics": list(matrix.names),
        "dropped_nonfinite": matrix.dropped,
        "matrix_csv": str(out_dir / "matrix.csv"),
        "matrix_json": str(out_dir / "matrix.json"),
    }
    return _finish(out_dir, config, {"total": time.perf_counter() - t0}, summary)


def job_distort(
    input_dir,
    out_dir,
    kind: str,
    dx: int = 0,
    dy: int = 0,
    sigma: float = 1.0,
    gamma: float = 1.0,
    bit_depth: int = 16,
) -> dict:
    t0 = time.perf_counter()
    try:
        kind_enum = analysis.DistortKind(kind)
    except ValueError as exc:
        raise UserDataError(
            f"kind must be one of {[k.value for k in analysis.DistortKind]}"
        ) from exc
    files = _png_files(input_dir)
    if not files:
        raise UserDataError(f"no input images in {input_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    for path in files:
        img = _read_with_sidecar(path)
        try:
            out = analysis.distort(img, kind_enum, dx=dx, dy=dy, sigma=sigma, gamma=gamma)
        except ValueError as exc:
            raise UserDataError(f"{path}: {exc}") from exc
        write_image(out, out_dir / path.name, bit_depth)
        written.append(path.name)

    params = {"kind": kind_enum.value}
    if kind_enum is analysis.DistortKind.SHIFT:
        params.update(dx=dx, dy=dy)
    elif kind_enum is analysis.DistortKind.BLUR:
        params["sigma"] = sigma
    else:
        params["gamma"] = gamma
    manifest = {"format": "distort-manifest-v1", "params": params, "files": written}
    _write_json(manifest, out_dir / "distort_manifest.json")
    config = {
        "command": "distort",
        "input_dir": str(input_dir),
        "out_dir": str(out_dir),
        "bit_depth": bit_depth,
        **params,
    }
    summary = {"images": len(written), "manifest": str(out_dir / "distort_manifest.json")}
    return _finish(out_dir, config, {"total": time.perf_counter() - t0}, summary)


def job_extract_toy(input_dir, out_dir, seed: int = 0, d: int = 64) -> dict:
    t0 = time.perf_counter()
    files = _png_files(input_dir)
    if not files:
        raise UserDataError(f"no input images in {input_dir}")
    images = [_read_with_sidecar(p) for p in files]
    try:
        acts = features.toy_extract(images, seed=seed, d=d)
    except ValueError as exc:
        raise UserDataError(str(exc)) from exc
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    features.save_activations(acts, out_dir / "activations.npy")
    ids_doc = {
        "format": "pooled-activations-v1",
        "extractor_id": acts.extractor_id,
        "ids": [p.stem for p in files],
        "n": acts.n,
        "d": acts.d,
        "file": "activations.npy",
    }
    _write_json(ids_doc, out_dir / "activations.json")
    config = {
        "command": "extract-toy",
        "input_dir": str(input_dir),
        "out_dir": str(out_dir),
        "seed": seed,
        "d": d,
    }
    summary = {
        "n": acts.n,
        "d": acts.d,
        "extractor_id": acts.extractor_id,
        "activations_npy": str(out_dir / "activations.npy"),
    }
    return _finish(out_dir, config, {"total": time.perf_counter() - t0}, summary)
