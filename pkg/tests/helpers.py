import numpy as np


def within_sigmas(hits: int, trials: int, p: float, sigmas: float = 4.0) -> bool:
    """Binomial check that ``hits/trials`` sits within ``sigmas`` of ``p``."""
    sd = np.sqrt(max(p * (1 - p), 1e-12) / trials)
    return abs(hits / trials - p) <= sigmas * sd + 1e-12


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(number: int, passed: bool, detail: str, seconds: float, limit: float) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(
        f"criterion {number}: {status} ({detail}; {seconds:.1f} s of {limit:g} s)"
    )
