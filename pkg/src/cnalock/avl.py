"""A small AVL-tree ordered map, the shared structure in the key-value benchmark.

Not thread-safe; the benchmark protects it with the lock under test.
"""

from __future__ import annotations

from typing import Any, Iterator, Optional, Tuple


class _Node:
    __slots__ = ("key", "value", "left", "right", "height")

    def __init__(self, key, value) -> None:
        self.key = key
        self.value = value
        self.left: Optional[_Node] = None
        self.right: Optional[_Node] = None
        self.height = 1


def _h(node: Optional[_Node]) -> int:
    return node.height if node is not None else 0


def _fix(node: _Node) -> None:
    node.height = 1 + max(_h(node.left), _h(node.right))


def _rotate_right(y: _Node) -> _Node:
    x = y.left
    y.left = x.right
    x.right = y
    _fix(y)
    _fix(x)
    return x


def _rotate_left(x: _Node) -> _Node:
    y = x.right
    x.right = y.left
    y.left = x
    _fix(x)
    _fix(y)
    return y


def _rebalance(node: _Node) -> _Node:
    _fix(node)
    balance = _h(node.left) - _h(node.right)
    if balance > 1:
        if _h(node.left.left) < _h(node.left.right):
            node.left = _rotate_left(node.left)
        return _rotate_right(node)
    if balance < -1:
        if _h(node.right.right) < _h(node.right.left):
            node.right = _rotate_right(node.right)
        return _rotate_left(node)
    return node


class AvlMap:
    """Ordered map with ``insert``/``remove``/``lookup`` returning success flags."""

    def __init__(self) -> None:
        self._root: Optional[_Node] = None
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __contains__(self, key) -> bool:
        return self.lookup(key) is not None

    def lookup(self, key) -> Optional[Any]:
        node = self._root
        while node is not None:
            if key < node.key:
                node = node.left
            elif node.key < key:
                node = node.right
            else:
                return node.value
        return None

    def insert(self, key, value=True) -> bool:
        """Add ``key``; returns False (and leaves the map alone) if present."""
        added = [False]

        def ins(node: Optional[_Node]) -> _Node:
            if node is None:
                added[0] = True
                return _Node(key, value)
            if key < node.key:
                node.left = ins(node.left)
            elif node.key < key:
                node.right = ins(node.right)
            else:
                return node
            return _rebalance(node)

        self._root = ins(self._root)
        if added[0]:
            self._size += 1
        return added[0]

    def remove(self, key) -> bool:
        removed = [False]

        def pop_min(node: _Node) -> Tuple[Optional[_Node], _Node]:
            if node.left is None:
                return node.right, node
            node.left, smallest = pop_min(node.left)
            return _rebalance(node), smallest

        def rem(node: Optional[_Node]) -> Optional[_Node]:
            if node is None:
                return None
            if key < node.key:
                node.left = rem(node.left)
            elif node.key < key:
                node.right = rem(node.right)
            else:
                removed[0] = True
                if node.left is None:
                    return node.right
                if node.right is None:
                    return node.left
                node.right, succ = pop_min(node.right)
                succ.left, succ.right = node.left, node.right
                node = succ
            return _rebalance(node)

        self._root = rem(self._root)
        if removed[0]:
            self._size -= 1
        return removed[0]

    def keys(self) -> Iterator:
        stack = []
        node = self._root
        while stack or node is not None:
            while node is not None:
                stack.append(node)
                node = node.left
            node = stack.pop()
            yield node.key
            node = node.right

    def height(self) -> int:
        return _h(self._root)

    def check(self) -> None:
        """Raise AssertionError unless ordering, heights and balance hold."""

        def walk(node: Optional[_Node], lo, hi) -> int:
            if node is None:
                return 0
            assert lo is None or lo < node.key, "order violated"
            assert hi is None or node.key < hi, "order violated"
            left = walk(node.left, lo, node.key)
            right = walk(node.right, node.key, hi)
            assert abs(left - right) <= 1, "unbalanced"
            assert node.height == 1 + max(left, right), "stale height"
            return node.height

        walk(self._root, None, None)
        assert sum(1 for _ in self.keys()) == self._size, "size mismatch"
