def should_log_progress(iteration: int, total: int, every: int) -> bool:
    """
    True on every `every`-th iteration (1-based) and on the last one.
    """
    return iteration == total or (every > 0 and iteration % every == 0)
