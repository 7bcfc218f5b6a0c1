from typing import Any, Dict, List, Sequence

import pandas as pd

STATUS_MARK = {"pass": "PASS", "fail": "FAIL"}


def render_check_table(title: str, rows: Sequence[Dict[str, Any]]) -> str:
    """
    Renders gradcheck / equiv result rows as a console table.
    Failing rows are listed again underneath with their detail.
    """
    if not rows:
        return f"{title}: no checks ran\n"
    frame = pd.DataFrame(list(rows))
    err_col = "max_rel_err" if "max_rel_err" in frame.columns else "max_abs_err"
    shown = pd.DataFrame({
        "check": frame["check"],
        "status": frame["status"].map(lambda s: STATUS_MARK.get(s, s)),
        err_col: frame[err_col].map(lambda v: f"{v:.3e}"),
    })
    failed = frame[frame["status"] != "pass"]
    lines = [f"== {title} ==", shown.to_string(index=False), ""]
    if failed.empty:
        lines.append(f"all {len(frame)} checks passed (worst {err_col} {frame[err_col].max():.3e})")
    else:
        lines.append(f"{len(failed)} of {len(frame)} checks FAILED:")
        for rec in failed.to_dict("records"):
            lines.append(f"  - {rec['check']}: {rec.get('detail', '')}")
    return "\n".join(lines) + "\n"


def render_report_summary(tables: Dict[str, pd.DataFrame]) -> str:
    """Per-variant mean normalized error and relative change vs Vanilla."""
    comparison = tables["comparison.csv"]
    means = comparison.groupby("variant", sort=False)["normalized_error_mean"].mean().rename("normalized_error")
    relative = tables["relative_vs_vanilla.csv"]
    out = means.to_frame()
    if not relative.empty:
        out["vs_vanilla_pct"] = relative.groupby("variant", sort=False)["relative_change_pct"].mean()
    totals = tables["params.csv"]
    totals = totals[totals["layer"] == "total"].set_index("variant")["trainable_params"]
    out["trainable_params"] = totals.reindex(out.index)
    return "== comparison ==\n" + out.reset_index().to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n"


def render_separation(table: pd.DataFrame) -> str:
    if table.empty:
        return "no cells exported\n"
    return "== separation ==\n" + table.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n"


def failed_checks(rows: List[Dict[str, Any]]) -> List[str]:
    return [r["check"] for r in rows if r["status"] != "pass"]
