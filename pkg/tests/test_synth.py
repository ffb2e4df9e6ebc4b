import numpy as np
import pytest

from cereg.scm import DgpSpec, build_syntext
from cereg.synth import (
    GlyphRendererSpec,
    TextRendererSpec,
    assemble,
    default_renderer,
    make_counterfactual,
    make_split_datasets,
    read_datasets,
    render,
    render_glyph,
    render_text,
    render_text_blocks,
    renderer_from_dict,
    write_datasets,
)

TEXT_SPEC = TextRendererSpec(seed=5, attributes=("causal", "confound", "spurious"))
ASSIGN = {"causal": 1, "confound": 0, "spurious": 1}


def test_render_is_pure():
    a = render_text(TEXT_SPEC, ASSIGN, noise_seed=77)
    b = render_text(TEXT_SPEC, ASSIGN, noise_seed=77)
    assert np.array_equal(a, b)
    c = render_text(TEXT_SPEC, ASSIGN, noise_seed=78)
    assert not np.array_equal(a, c)


def test_feature_vector_is_sum_of_blocks():
    blocks = render_text_blocks(TEXT_SPEC, ASSIGN, noise_seed=3)
    total = render_text(TEXT_SPEC, ASSIGN, noise_seed=3)
    assert np.allclose(total, sum(blocks.values()), atol=1e-15)
    assert set(blocks) == {"causal", "confound", "spurious"}


def test_flip_changes_only_that_block():
    flipped = dict(ASSIGN, spurious=0)
    b0 = render_text_blocks(TEXT_SPEC, ASSIGN, noise_seed=9)
    b1 = render_text_blocks(TEXT_SPEC, flipped, noise_seed=9)
    assert np.array_equal(b0["causal"], b1["causal"])
    assert np.array_equal(b0["confound"], b1["confound"])
    assert not np.array_equal(b0["spurious"], b1["spurious"])


def test_zeroed_word_lists_remove_exactly_that_block():
    lists = tuple((n, w0, w1) if n != "spurious" else (n, ("",), ("",))
                  for n, w0, w1 in TEXT_SPEC.word_lists)
    zeroed = TextRendererSpec(seed=5, attributes=TEXT_SPEC.attributes, word_lists=lists)
    full = render_text_blocks(TEXT_SPEC, ASSIGN, noise_seed=4)
    got = render_text(zeroed, ASSIGN, noise_seed=4)
    want = full["causal"] + full["confound"]
    assert np.allclose(got, want, atol=1e-15)


def test_unobserved_attribute_never_renders():
    spec = TextRendererSpec(seed=5, attributes=("causal", "spurious"))
    with_conf = {"causal": 1, "confound": 0, "spurious": 1}
    other_conf = {"causal": 1, "confound": 1, "spurious": 1}
    assert np.array_equal(render_text(spec, with_conf, 12), render_text(spec, other_conf, 12))


def test_glyph_rotation_flip_is_rot90():
    spec = GlyphRendererSpec(seed=1, noise=0.0)
    base = render_glyph(spec, {"color": 0, "digit": 1, "rotation": 0}, 5).reshape(8, 8, 2)
    rot = render_glyph(spec, {"color": 0, "digit": 1, "rotation": 1}, 5).reshape(8, 8, 2)
    assert np.array_equal(rot[:, :, 0], np.rot90(base[:, :, 0]))
    assert np.array_equal(rot[:, :, 1], base[:, :, 1])  # empty channel stays empty


def test_glyph_color_flip_swaps_channels():
    spec = GlyphRendererSpec(seed=1, noise=0.0)
    red = render_glyph(spec, {"color": 0, "digit": 0, "rotation": 1}, 5).reshape(8, 8, 2)
    green = render_glyph(spec, {"color": 1, "digit": 0, "rotation": 1}, 5).reshape(8, 8, 2)
    assert np.array_equal(red[:, :, 0], green[:, :, 1])
    assert np.array_equal(red[:, :, 1], green[:, :, 0])


def test_glyph_noise_is_attribute_independent():
    spec = GlyphRendererSpec(seed=1, noise=0.05)
    clean = GlyphRendererSpec(seed=1, noise=0.0)
    for assign in ({"color": 0, "digit": 1, "rotation": 0},
                   {"color": 1, "digit": 0, "rotation": 1}):
        noise = render(spec, assign, 5) - render(clean, assign, 5)
        ref = render(spec, {"color": 0, "digit": 0, "rotation": 0}, 5) - \
            render(clean, {"color": 0, "digit": 0, "rotation": 0}, 5)
        assert np.allclose(noise, ref, atol=1e-15)


def _tiny_dataset(kappa=0.8, n_majority=40, template="SynTextObsConf", seed=3):
    dgp = DgpSpec(template, kappa)
    renderer = default_renderer(dgp, seed=seed)
    return assemble(dgp.build(), renderer, n_majority, kappa, seed, dgp=dgp.to_dict())


def test_assemble_counts_and_kappa():
    ds = _tiny_dataset(kappa=0.8, n_majority=800 // 4)  # keep the test quick
    assert sum(g == "maj" for g in ds.groups()) == 200
    assert sum(g == "min" for g in ds.groups()) == 50
    assert abs(ds.kappa_realized - 0.8) < 1 / len(ds)

    ds99 = _tiny_dataset(kappa=0.99, n_majority=800)
    assert sum(g == "min" for g in ds99.groups()) == 8  # floor(800 * 0.01/0.99)


def test_assemble_rejects_kappa_one():
    dgp = DgpSpec("SynTextObsConf", 1.0)
    renderer = default_renderer(dgp, seed=0)
    with pytest.raises(ValueError, match="kappa"):
        assemble(dgp.build(), renderer, 10, 1.0, 0)


def test_group_tag_matches_definition():
    ds = _tiny_dataset()
    for e in ds.examples:
        want = "maj" if e.label == e.attributes["spurious"] else "min"
        assert e.group == want


def test_counterfactual_involution_and_isolation():
    ds = _tiny_dataset(n_majority=10)
    e = ds.examples[0]
    cf = make_counterfactual(ds.renderer, e, "spurious", spurious_attr="spurious")
    back = make_counterfactual(ds.renderer, cf, "spurious", spurious_attr="spurious")
    assert np.array_equal(back.features, e.features)
    assert cf.label == e.label
    assert cf.attributes["spurious"] == 1 - e.attributes["spurious"]
    assert cf.group != e.group  # flipping the spurious value flips the group
    # stored counterfactuals agree with on-the-fly rendering
    assert np.array_equal(e.counterfactuals["spurious"], cf.features)
    assert np.array_equal(cf.counterfactuals["spurious"], e.features)


def test_assemble_deterministic():
    a = _tiny_dataset(seed=9)
    b = _tiny_dataset(seed=9)
    assert np.array_equal(a.features(), b.features())
    assert np.array_equal(a.labels(), b.labels())


def test_split_datasets_shapes():
    dgp = DgpSpec("SynTextUnobsConf", 0.9)
    splits = make_split_datasets(dgp, default_renderer(dgp, 1), 0.9, seed=1,
                                 sizes={"train": 120, "val": 40, "test": 40})
    assert len(splits["train"]) == 120 and len(splits["val"]) == 40
    assert splits["train"].attributes == ("causal", "spurious")
    # independent split seeds: no identical noise streams
    assert not np.array_equal(splits["train"].features()[:40], splits["val"].features())


def test_mnist34_dataset_labels_are_xor():
    dgp = DgpSpec("Mnist34Latent", 0.7)
    ds = assemble(dgp.build(), default_renderer(dgp, 2), 30, 0.7, 2,
                  spurious_attr="rotation")
    for e in ds.examples:
        assert e.label == e.attributes["color"] ^ e.attributes["digit"]
        assert set(e.counterfactuals) == {"color", "digit", "rotation"}


def test_dataset_file_round_trip(tmp_path):
    dgp = DgpSpec("SynTextObsConf", 0.8)
    splits = make_split_datasets(dgp, default_renderer(dgp, 4), 0.8, seed=4,
                                 sizes={"train": 40, "val": 20})
    path = tmp_path / "data.jsonl"
    write_datasets(path, splits)
    back = read_datasets(path)
    assert set(back) == {"train", "val"}
    for split in back:
        a, b = splits[split], back[split]
        assert np.array_equal(a.features(), b.features())
        assert np.array_equal(a.labels(), b.labels())
        assert np.array_equal(a.cf_features("spurious"), b.cf_features("spurious"))
        assert a.kappa_realized == b.kappa_realized
        assert list(a.groups()) == list(b.groups())
    assert back["train"].renderer == splits["train"].renderer


def test_renderer_spec_round_trip():
    spec = TextRendererSpec(seed=8, attributes=("causal", "spurious"))
    assert renderer_from_dict(spec.to_dict()) == spec
    g = GlyphRendererSpec(seed=3, noise=0.1)
    assert renderer_from_dict(g.to_dict()) == g
