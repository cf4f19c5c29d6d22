"""
Startup script for the self-guided MAE toolkit.

Usage:
    python run_mae.py {gen-data,pretrain,analyze,mask,probe} [--config PATH] [flags]
"""
import sys
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from app.main import main as run_cli  # noqa: E402


def main():
    """Print a banner, then run the requested subcommand."""
    command = sys.argv[1] if len(sys.argv) > 1 else "(none)"

    print("\n" + "=" * 60, file=sys.stderr)
    print("Self-guided masked autoencoder", file=sys.stderr)
    print("=" * 60, file=sys.stderr)
    print(f"Command: {command}", file=sys.stderr)
    print("=" * 60 + "\n", file=sys.stderr)

    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
