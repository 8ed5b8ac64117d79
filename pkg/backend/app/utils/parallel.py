from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_documents(function: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Apply `function` to every item, on `jobs` threads; results keep input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(function, items))
