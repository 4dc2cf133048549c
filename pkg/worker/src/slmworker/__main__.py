"""Run the worker: python -m slmworker --port 8071"""

import argparse

import uvicorn

from .config import ALL_CAPABILITIES, WorkerConfig
from .service import build_app


def main() -> None:
    parser = argparse.ArgumentParser(prog="slmworker", description="Serve the model worker.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8071)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-context", type=int, default=512)
    parser.add_argument(
        "--capabilities", nargs="*", default=list(ALL_CAPABILITIES),
        choices=list(ALL_CAPABILITIES), help="capabilities to serve",
    )
    args = parser.parse_args()
    config = WorkerConfig(
        capabilities=tuple(args.capabilities), port=args.port,
        seed=args.seed, max_context=args.max_context,
    )
    uvicorn.run(build_app(config), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
