import threading

from augforest.parallel import parallel_map


def test_parallel_map_single_thread_preserves_order() -> None:
    assert parallel_map(lambda x: x * x, [3, 1, 2]) == [9, 1, 4]


def test_parallel_map_threads_preserve_order() -> None:
    """Test that results come back in input order when work runs on threads."""
    assert parallel_map(lambda x: x + 1, range(20), threads=4) == list(range(1, 21))


def test_parallel_map_uses_worker_threads() -> None:
    main = threading.get_ident()
    idents = parallel_map(lambda _: threading.get_ident(), range(8), threads=3)
    assert all(ident != main for ident in idents)


def test_parallel_map_empty() -> None:
    assert parallel_map(lambda x: x, [], threads=4) == []
