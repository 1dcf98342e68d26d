import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from c0embed import gallery
from c0embed.embedding import audit_embedding, build_good_embedding, kuratowski_baseline, strictify
from c0embed.errors import BadSpec, InvariantError, ParseError, SchemaError, ShapeMismatch, SpaceIOError
from c0embed.gallery import SpaceSpec


specs = st.one_of(
    st.builds(SpaceSpec, kind=st.just("lp_sample"), n=st.integers(1, 25), p=st.sampled_from([1.0, 2.0, 3.0, np.inf]),
              dim=st.integers(1, 5), seed=st.integers(0, 2 ** 32)),
    st.builds(SpaceSpec, kind=st.just("graph_metric"), n=st.integers(1, 30), seed=st.integers(0, 2 ** 32),
              edge_prob=st.one_of(st.none(), st.floats(0.0, 1.0))),
    st.builds(SpaceSpec, kind=st.just("l1_config"), p=st.just(1.0), dim=st.integers(1, 4)),
    st.builds(SpaceSpec, kind=st.just("counterexample"), p_max=st.integers(1, 4)),
)


@given(specs)
def test_generated_spaces_are_metrics(spec):
    s = gallery.generate(spec)
    assert oracles.first_axiom_failure(s.dist.tolist()) is None
    again = gallery.generate(spec)
    assert s.dist.tobytes() == again.dist.tobytes()
    if spec.kind != "graph_metric":
        assert s.has_coords


def test_cross_layout_l1_distances():
    s = gallery.generate(SpaceSpec("lp_sample", n=6, p=1.0, layout="cross"))
    off = s.dist[~np.eye(6, dtype=bool)]
    assert set(off.tolist()) == {2.0}


def test_random_coordinates_are_on_the_grid():
    s = gallery.generate(SpaceSpec("lp_sample", n=10, seed=4))
    assert np.array_equal(np.round(s.coords / gallery.GRID) * gallery.GRID, s.coords)


def test_graph_weights_are_grid_multiples():
    s = gallery.generate(SpaceSpec("graph_metric", n=20, seed=4))
    units = s.dist / gallery.GRID
    assert np.allclose(units, np.round(units), atol=1e-6)
    assert np.array_equal(s.dist, s.dist.T)


def test_standard_corpus_shape():
    c = gallery.standard_corpus(0)
    lp = [s for s in c if s.kind == "lp_sample"]
    gr = [s for s in c if s.kind == "graph_metric"]
    assert len(lp) == 100 and len(gr) == 20
    assert max(s.n for s in lp) <= 60 and max(s.n for s in gr) <= 100
    assert c == gallery.standard_corpus(0)


@pytest.mark.parametrize("kw", [
    dict(kind="nope"), dict(kind="lp_sample", n=0), dict(kind="lp_sample", p=0.5),
    dict(kind="lp_sample", layout="cross", n=3), dict(kind="csv"), dict(kind="graph_metric", edge_prob=2.0),
])
def test_bad_specs(kw):
    with pytest.raises(BadSpec):
        SpaceSpec(**kw).validate()


def test_spec_json_round_trip():
    spec = SpaceSpec("graph_metric", n=12, seed=5, edge_prob=0.2)
    assert SpaceSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec
    with pytest.raises(BadSpec):
        SpaceSpec.from_json({"kind": "lp_sample", "bogus": 1})


# -- files --------------------------------------------------------------------------------------


@pytest.mark.parametrize("suffix", [".csv", ".json"])
@pytest.mark.parametrize("spec", [SpaceSpec("lp_sample", n=8, seed=1, p=np.inf), SpaceSpec("graph_metric", n=9),
                                  SpaceSpec("counterexample", p_max=2)])
def test_space_round_trip(tmp_path, suffix, spec):
    s = gallery.generate(spec)
    path = tmp_path / ("s" + suffix)
    gallery.save_space(s, path)
    t = gallery.load_space(path)
    assert np.array_equal(s.dist, t.dist)
    assert s.labels == t.labels
    assert gallery.generate(SpaceSpec(suffix[1:], path=str(path))).dist.tobytes() == s.dist.tobytes()


def test_csv_parse_errors():
    with pytest.raises(ParseError) as info:
        gallery.space_from_csv("2\n0,1\n1,x\n")
    assert (info.value.line, info.value.column) == (3, 2)
    with pytest.raises(ParseError) as info:
        gallery.space_from_csv("two\n")
    assert info.value.line == 1
    with pytest.raises(ParseError):
        gallery.space_from_csv("3\n0,1,1\n1,0,1\n")


def test_csv_labels():
    s = gallery.space_from_csv("2\n0,1,a\n1,0,b\n")
    assert s.labels == ("a", "b")


def test_load_rejects_non_metrics(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("3\n0,1,3\n1,0,1\n3,1,0\n")
    with pytest.raises(InvariantError):
        gallery.load_space(p)
    with pytest.raises(SpaceIOError):
        gallery.load_space(tmp_path / "missing.csv")


@pytest.mark.parametrize("text, path", [
    ('[1, 2]', "$"),
    ('{"points": [[0], "a"]}', "$.points[1]"),
    ('{"points": [[0], [1]], "labels": ["a"]}', "$.labels"),
    ('{"matrix": [[0, true], [1, 0]]}', "$.matrix[0][1]"),
    ('{"foo": 1}', "$"),
])
def test_json_schema_errors(text, path):
    with pytest.raises(SchemaError) as info:
        gallery.space_from_json(text)
    assert info.value.path == path


def test_json_syntax_error_position():
    with pytest.raises(ParseError) as info:
        gallery.space_from_json('{"matrix":\n [[0, 1], [1 0]]}')
    assert info.value.line == 2


# -- embeddings ------------------------------------------------------------------------------------


@pytest.fixture
def built():
    s = gallery.generate(SpaceSpec("lp_sample", n=12, seed=3))
    return s, strictify(build_good_embedding(s, 2.0))


def test_embedding_round_trip(tmp_path, built):
    s, e = built
    path = tmp_path / "e.json"
    gallery.save_embedding(e, path, s, mode="strict")
    obj = json.loads(path.read_text())
    assert set(obj) >= {"lambda", "n", "coords", "meta", "cert"}
    assert obj["cert"]["min_lower_margin"] > 0
    assert all(len(t) == 3 for t in obj["cert"]["witness"])
    f = gallery.load_embedding(path, s)
    assert np.array_equal(f.matrix, e.matrix)
    assert np.array_equal(f.witness, e.witness)
    assert f.meta == e.meta and f.eps == e.eps and f.order == e.order and f.decay == e.decay
    gallery.save_embedding(f, tmp_path / "f.json", s, mode="strict")
    assert (tmp_path / "f.json").read_bytes() == path.read_bytes()


def test_embedding_wrong_space(tmp_path, built):
    s, e = built
    path = tmp_path / "e.json"
    gallery.save_embedding(e, path)
    with pytest.raises(ShapeMismatch):
        gallery.load_embedding(path, gallery.generate(SpaceSpec("lp_sample", n=5)))


def test_corrupted_embeddings_name_the_path(built):
    s, e = built
    good = gallery.embedding_to_json(e)
    cases = [
        (lambda o: o.pop("coords"), "$.coords"),
        (lambda o: o["coords"][0].__setitem__(3, "x"), "$.coords[0][3]"),
        (lambda o: o["meta"][1].pop("scale"), "$.meta[1].scale"),
        (lambda o: o["meta"][0].__setitem__("U", [99]), "$.meta[0].U"),
        (lambda o: o["cert"]["witness"].__setitem__(0, [0, 1]), "$.cert.witness[0]"),
        (lambda o: o.__setitem__("n", -1), "$.n"),
    ]
    for corrupt, path in cases:
        obj = json.loads(json.dumps(good))
        corrupt(obj)
        with pytest.raises(SchemaError) as info:
            gallery.embedding_from_json(obj)
        assert info.value.path == path


@given(st.binary(max_size=80))
def test_fuzzed_embedding_files_fail_cleanly(blob):
    text = blob.decode("latin-1")
    try:
        gallery.embedding_from_json(gallery._parse_json(text))
    except (ParseError, SchemaError):
        pass


def test_report_csv_columns(built):
    s, e = built
    cert = audit_embedding(s, e, 2.0, "strict")
    row = gallery.report_row(SpaceSpec("lp_sample", n=12, seed=3), s, 2.0, e, cert)
    text = gallery.report_to_csv([row])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == gallery.REPORT_COLUMNS
    assert float(rows[0]["distortion"]) == cert.distortion


def test_kuratowski_file_round_trip(tmp_path):
    s = gallery.generate(SpaceSpec("graph_metric", n=10, seed=2))
    e = kuratowski_baseline(s)
    gallery.save_embedding(e, tmp_path / "k.json", s, mode="plain")
    assert audit_embedding(s, gallery.load_embedding(tmp_path / "k.json", s), 1.0, "plain").ok
