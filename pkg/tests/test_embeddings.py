import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrae.embeddings import (EOS, UNK, EmbeddingError, EmbeddingTable, MatchError, is_match,
                             load_embeddings, make_special_vectors, match_batch, save_embeddings,
                             synthetic_table)


def brute_force_match(outputs, table):
    """Per-row, per-word cosine loop; first maximum wins."""
    out = []
    for y in outputs:
        best, best_sim = None, -np.inf
        for j, v in enumerate(table.vectors):
            c = float(np.dot(y, v) / (np.sqrt(np.dot(y, y)) * np.sqrt(np.dot(v, v))))
            if c > best_sim:
                best, best_sim = j, c
        out.append((best, best_sim))
    return out


FIXTURE = "3 4\nthe 0.1 0.2 0.3 0.4\ncat -1 0 0.5 2\nAbraham_Lincoln 1e-3 2 3 4\n"


def test_load_fixture(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text(FIXTURE)
    t = load_embeddings(p)
    assert (len(t), t.dim) == (3, 4)
    assert t.words == ["the", "cat", "Abraham_Lincoln"]
    np.testing.assert_array_equal(t.vectors[1], [-1, 0, 0.5, 2])


def test_duplicate_word_named(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("2 2\ncat 1 2\ncat 3 4\n")
    with pytest.raises(EmbeddingError, match="cat"):
        load_embeddings(p)


@pytest.mark.parametrize("body, msg", [
    ("2 2\na 1 2\nb 3\n", ":3:"),
    ("2 2\na 1 2\nb 3 x\n", ":3:"),
    ("3 2\na 1 2\nb 3 4\n", "declares 3"),
    ("2 2\na 0 0\nb 1 1\n", "zero-norm"),
])
def test_malformed(tmp_path, body, msg):
    p = tmp_path / "e.txt"
    p.write_text(body)
    with pytest.raises(EmbeddingError, match=msg):
        load_embeddings(p)


@pytest.mark.parametrize("fmt", ["text", "binary"])
def test_round_trip(tmp_path, fmt):
    t = synthetic_table(10, 5, seed=1)
    if fmt == "binary":  # float32 payload: round trip exact for float32-representable tables
        t = EmbeddingTable(t.words, t.vectors.astype(np.float32).astype(np.float64))
    p = tmp_path / "e.bin"
    save_embeddings(t, p, fmt)
    back = load_embeddings(p)
    assert back.words == t.words
    assert back.vectors.tobytes() == t.vectors.tobytes()


def test_binary_layout(tmp_path):
    t = EmbeddingTable(["a", "bb"], [[1.0, 2.0], [3.0, 4.0]])
    p = tmp_path / "e.bin"
    save_embeddings(t, p, "binary")
    data = p.read_bytes()
    assert data[:9] == b"RRAE-EMB1"
    assert data[9:17] == (2).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert data[17:22] == (1).to_bytes(4, "little") + b"a"
    assert len(data) == 9 + 8 + 5 + 6 + 16


class TestSpecialVectors:
    def test_adds_one(self):
        t = synthetic_table(10, 4, seed=0, specials=())
        t2 = make_special_vectors(t, [EOS], 0)
        assert len(t2) == len(t) + 1 and t2.eos_id == len(t)

    def test_collision(self):
        t = synthetic_table(5, 4, seed=0)
        with pytest.raises(EmbeddingError):
            make_special_vectors(t, [EOS], 0)

    def test_deterministic(self):
        t = synthetic_table(10, 4, seed=0, specials=())
        a = make_special_vectors(t, [EOS, UNK, "and"], 9)
        b = make_special_vectors(t, [EOS, UNK, "and"], 9)
        assert a.vectors.tobytes() == b.vectors.tobytes()
        assert "and" in a.special_ids

    def test_statistics(self):
        r = np.random.default_rng(0)
        base = EmbeddingTable([f"w{i}" for i in range(500)], r.normal(0.3, 0.7, size=(500, 200)))
        t = make_special_vectors(base, ["s"], 4)
        v = t.vectors[-1]
        mean, std = base.vectors.mean(), base.vectors.std()
        se_mean = std / np.sqrt(v.size)
        se_std = std / np.sqrt(2 * v.size)
        assert abs(v.mean() - mean) < 3 * se_mean
        assert abs(v.std() - std) < 3 * se_std


class TestMatching:
    def test_exact_row(self, small_table):
        for k in (0, 7, len(small_table) - 1):
            m = match_batch(small_table.vectors[k][None], small_table)[0]
            assert m.word_id == k and m.similarity == pytest.approx(1.0, abs=1e-12)

    def test_negative_single_word(self):
        t = EmbeddingTable(["a"], [[1.0, 2.0, -1.0]])
        m = match_batch(-t.vectors, t)[0]
        assert m.word_id == 0 and m.similarity == pytest.approx(-1.0)

    def test_brute_force_v50(self, rng):
        t = EmbeddingTable([f"w{i}" for i in range(50)], rng.normal(size=(50, 8)))
        out = rng.normal(size=(30, 8))
        got = match_batch(out, t)
        for m, (j, s) in zip(got, brute_force_match(out, t)):
            assert m.word_id == j and m.similarity == pytest.approx(s, abs=1e-6)

    def test_ties_lowest_index(self):
        t = EmbeddingTable(["a", "b", "c"], [[0.0, 1.0], [1.0, 0.0], [2.0, 0.0]])
        assert match_batch(np.array([[3.0, 0.0]]), t)[0].word_id == 1

    def test_zero_row(self, small_table):
        out = small_table.vectors[:3].copy()
        out[2] = 0
        with pytest.raises(MatchError, match="row 2"):
            match_batch(out, small_table)

    def test_every_word_matches_itself(self, small_table):
        res = match_batch(small_table.vectors, small_table)
        assert [m.word_id for m in res] == list(range(len(small_table)))
        assert all(abs(m.similarity - 1) <= 1e-6 for m in res)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, c):
        r = np.random.default_rng(seed)
        t = EmbeddingTable([f"w{i}" for i in range(40)], r.normal(size=(40, 6)))
        out = r.normal(size=(10, 6))
        assert [m.word_id for m in match_batch(c * out, t)] == [m.word_id for m in match_batch(out, t)]

    def test_is_match(self, small_table):
        assert is_match(small_table.vectors[3], 3, small_table)
        assert not is_match(small_table.vectors[4], 3, small_table)

    def test_segment_flips_once(self):
        t = synthetic_table(6, 3, seed=2)
        a, b = 1, 4
        flips, prev = 0, None
        for s in np.linspace(0, 1, 401):
            y = (1 - s) * t.vectors[a] + s * t.vectors[b]
            cos = t.unit @ (y / np.linalg.norm(y))
            brute = int(np.argmax(cos))
            assert is_match(y, brute, t)
            state = is_match(y, a, t)
            if prev is not None and state != prev:
                flips += 1
            prev = state
        assert flips == 1


def test_synthetic_separation():
    t = synthetic_table(48, 8, seed=0, max_cos=0.6)
    c = t.unit @ t.unit.T
    np.fill_diagonal(c, -1)
    assert c.max() <= 0.6 and len(t) == 50 and t.eos_id == 48 and t.unk_id == 49


def test_missing_specials():
    t = synthetic_table(3, 2, seed=0, specials=())
    with pytest.raises(EmbeddingError):
        t.eos_id
