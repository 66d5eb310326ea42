import pytest

from cachelab import load_profile
from cachelab.config import ProfileError, available_profiles, profile_from_dict

from conftest import PROFILES


def base_dict():
    return {
        "name": "toy", "latency": {"l1": 4, "l2": 12, "llc": 105, "memory": 345},
        "l1": {"sets": 64, "ways": 8}, "l2": {"sets": 1024, "ways": 4},
        "llc": {"sets": 2048, "ways": 12},
    }


@pytest.mark.parametrize("name", PROFILES)
def test_builtin_profiles_load(name):
    p = load_profile(name)
    assert p.name == name
    lat = p.latencies()
    assert lat["L1"] < lat["L2"] < lat["LLC"] < lat["MEMORY"]
    assert p.ll_threshold == 58 and p.mem_threshold == 300


def test_geometry():
    assert load_profile("i7-4790").llc.slice_count == 4
    assert load_profile("i7-4790").insertion_mode == "duel"
    assert load_profile("i3-5010U").ways == 12
    assert load_profile("i5-7600K").llc_policy == "quadage-mode1"
    assert set(PROFILES) <= set(available_profiles())


def test_unknown_profile():
    with pytest.raises(ProfileError, match="unknown profile"):
        load_profile("pentium-pro")


def test_env_search_path(tmp_path, monkeypatch):
    src = load_profile.__globals__["BUILTIN_DIR"] / "i5-7600K.toml"
    (tmp_path / "mine.toml").write_text(src.read_text().replace('name = "i5-7600K"', 'name = "mine"'))
    monkeypatch.setenv("CACHELAB_PROFILE_DIR", str(tmp_path))
    assert load_profile("mine").name == "mine"


def test_profile_from_path(tmp_path):
    f = tmp_path / "x.toml"
    f.write_text("not = [valid")
    with pytest.raises(ProfileError):
        load_profile(str(f))


@pytest.mark.parametrize("mutate", [
    lambda d: d["latency"].update(llc=400),
    lambda d: d["llc"].update(sets=1000),
    lambda d: d.pop("l2"),
    lambda d: d.update(insertion_mode="mode7"),
    lambda d: d.update(insertion_mode="duel"),
    lambda d: d.update(thresholds={"mem": 100}),
])
def test_inconsistent_profiles_rejected(mutate):
    d = base_dict()
    mutate(d)
    with pytest.raises(ProfileError):
        profile_from_dict(d)


def test_defaults_fill_in():
    p = profile_from_dict(base_dict())
    assert p.llc_policy == "quadage-mode1" and p.cores == 1 and p.dueling is None
