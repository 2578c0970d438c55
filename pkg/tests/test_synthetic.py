import filecmp
import os

from macroplace.bookshelf import parse_aux
from macroplace.synthetic import bundled_aux, make_design, write_bundled


def test_bundled_files_regenerate_identically(tmp_path):
    write_bundled(str(tmp_path))
    src = os.path.dirname(bundled_aux())
    for name in sorted(os.listdir(src)):
        assert filecmp.cmp(os.path.join(src, name), tmp_path / name, shallow=False), name


def test_make_design_shape():
    n = make_design(n_macros=3, n_std=40, n_pads=4, seed=1, name="x")
    c = n.counts()
    assert (c["movable_macros"], c["standard"], c["terminal"]) == (3, 40, 4)
    assert make_design(seed=1).counts() == make_design(seed=1).counts()


def test_bundled_parses(synth):
    assert parse_aux(bundled_aux()).counts() == synth.counts()
