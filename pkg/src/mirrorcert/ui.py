"""Console rendering for experiment runs."""

from __future__ import annotations

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text
from rich.theme import Theme

theme = Theme({
    "experiment.name": "bold cyan",
    "experiment.index": "dim",
    "check.ok": "green",
    "check.failed": "bold red",
    "check.skipped": "dim",
})

# Console output goes to stderr
console = Console(theme=theme, stderr=True)

MESSAGE_LINES = 5
MESSAGE_WIDTH = 80

_CHECK_STATUS = {True: ("ok", "check.ok"), False: ("FAILED", "check.failed"), None: ("skipped", "check.skipped")}


def clip_message(message: str, max_lines: int = MESSAGE_LINES, width: int = MESSAGE_WIDTH) -> str:
    """First max_lines lines of message, each cut to width."""
    lines = message.splitlines() or [""]
    shown = [line if len(line) <= width else line[: width - 3] + "..." for line in lines[:max_lines]]
    if len(lines) > max_lines:
        shown.append(f"... ({len(lines) - max_lines} more lines)")
    return "\n".join(shown)


def render_experiment_header(name: str, index: int = 1, total: int = 1) -> Text:
    text = Text.assemble(("▶ ", "bold"), (name, "experiment.name"))
    if total > 1:
        text.append(f"  ({index}/{total})", style="experiment.index")
    return text


def render_result(message: str, is_error: bool = False) -> Panel:
    """Final status of a run as a green or red panel."""
    title, border = ("❌ Failed", "red") if is_error else ("✅ Done", "green")
    return Panel(Text(clip_message(message)), title=title, title_align="left", border_style=border, padding=(0, 1))


def render_checks(title: str, checks: dict[str, bool | None]) -> Table:
    """Named pass/fail flags as a table; None shows as skipped."""
    table = Table(title=title, title_justify="left", header_style="bold")
    table.add_column("check", style="experiment.name")
    table.add_column("status")
    for name, ok in checks.items():
        label, style = _CHECK_STATUS[ok]
        table.add_row(name, Text(label, style=style))
    return table
