import logging

from melo.core.config import settings
from melo.core.oracles import run_oracles

logger = logging.getLogger(__name__)


def run(args, threads: int) -> int:
    results = run_oracles(args.seed if args.seed is not None else settings.seed)
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    failures = [r for r in results if not r.passed]
    print(f"{len(results) - len(failures)}/{len(results)} checks passed")
    return 3 if failures else 0
