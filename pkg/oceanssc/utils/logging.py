'''
Console logging for the oceanssc command line.

Consecutive records from the same logger and level are grouped into a single
rich panel; repeated warnings are shown once.

    from oceanssc.utils.logging import setup_logging
    setup_logging(verbose=True)
'''
import logging
from typing import Optional

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.traceback import Traceback


class UniqueWarningFilter(logging.Filter):
    def __init__(self):
        super().__init__()
        self.seen_messages = set()

    def filter(self, record):
        if record.levelno >= logging.WARNING:
            msg_id = (record.name, record.msg, str(record.args))
            if msg_id in self.seen_messages:
                return False
            self.seen_messages.add(msg_id)
        return True


_STYLES = {
    logging.ERROR: ("Error", "bold red"),
    logging.WARNING: ("Warning", "bold yellow"),
    logging.INFO: ("Info", "bold blue"),
    logging.DEBUG: ("Debug", "dim"),
}


class PanelHandler(logging.Handler):
    """Buffer records per (logger, level) and print each run as one panel."""

    def __init__(self, console: Optional[Console] = None):
        super().__init__()
        # stderr keeps stdout clean for piped JSON reports
        self.console = console or Console(stderr=True)
        self.buffer = []
        self.last_key = None

    def emit(self, record):
        try:
            if record.levelno >= logging.ERROR and record.exc_info:
                self.flush()
                tb = Traceback.from_exception(*record.exc_info, suppress=[__name__])
                self.console.print(Panel(tb, title=f"::{record.name}:: Error", style="bold red"))
                return

            key = (record.name, record.levelno)
            if key != self.last_key:
                self.flush()
            bullet = "•" if record.levelno >= logging.ERROR else "-"
            self.buffer.append((record.levelno, record.name, f"{bullet} {self.format(record)}"))
            self.last_key = key
        except Exception:
            self.handleError(record)

    def flush(self):
        if not self.buffer:
            return
        levelno, logger_name, _ = self.buffer[0]
        label, style = _STYLES.get(levelno, ("Log", ""))
        messages = "\n".join(msg for _, _, msg in self.buffer)
        self.console.print(Panel(messages, title=f"::{logger_name}:: {label}",
                                 style=style, box=box.ROUNDED))
        self.buffer.clear()
        self.last_key = None

    def close(self):
        self.flush()
        super().close()


def setup_logging(verbose: bool = False, quiet: bool = False,
                  console: Optional[Console] = None) -> logging.Logger:
    """
    Attach a single PanelHandler to the ``oceanssc`` logger.

    ``verbose`` selects DEBUG, ``quiet`` selects ERROR, otherwise INFO.
    Calling it again replaces the previous handler.
    """
    root = logging.getLogger("oceanssc")
    for handler in list(root.handlers):
        if isinstance(handler, PanelHandler):
            handler.flush()
            root.removeHandler(handler)

    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.INFO
    handler = PanelHandler(console=console)
    handler.setFormatter(logging.Formatter("%(message)s"))
    handler.addFilter(UniqueWarningFilter())
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False
    return root


def flush_logging() -> None:
    for handler in logging.getLogger("oceanssc").handlers:
        handler.flush()
