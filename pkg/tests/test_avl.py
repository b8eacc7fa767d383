from hypothesis import given, settings, strategies as st

from cnalock.avl import AvlMap

ops = st.lists(st.tuples(st.sampled_from(["insert", "remove", "lookup"]), st.integers(0, 63)), max_size=300)


@settings(max_examples=200)
@given(ops)
def test_matches_dict_model(seq):
    tree, model = AvlMap(), {}
    for op, key in seq:
        if op == "insert":
            assert tree.insert(key, key * 2) == (key not in model)
            model.setdefault(key, key * 2)
        elif op == "remove":
            assert tree.remove(key) == (key in model)
            model.pop(key, None)
        else:
            assert tree.lookup(key) == model.get(key)
    tree.check()
    assert list(tree.keys()) == sorted(model)
    assert len(tree) == len(model)


def test_height_is_logarithmic():
    tree = AvlMap()
    for k in range(1023):
        tree.insert(k)
    tree.check()
    # an AVL tree with n nodes has height < 1.45 log2(n + 2)
    assert tree.height() <= 14


def test_contains_and_duplicate_insert():
    tree = AvlMap()
    assert tree.insert(3, "a")
    assert not tree.insert(3, "b")
    assert 3 in tree and tree.lookup(3) == "a"
    assert not tree.remove(4)
