"""
CLI サブコマンド
"""

from .common import RunContext, apply_overrides, open_context
from .solve import cmd_solve
from .study import cmd_study
from .transport import cmd_transport
from .verify import cmd_verify

COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "study": cmd_study,
    "transport": cmd_transport,
}

__all__ = ["COMMANDS", "RunContext", "apply_overrides", "open_context",
           "cmd_solve", "cmd_verify", "cmd_study", "cmd_transport"]
