from rmesim.counterexamples import starvation_scenario


def test_faulty_lock_starves_p2():
    rep = starvation_scenario(rounds=200)
    assert rep.starved and rep.rounds == 200
    assert rep.fallbacks == 0
    # ownership keeps moving among the other three processes
    owners = {row["owner"] for row in rep.table}
    assert 1 not in owners and len(owners) >= 2


def test_correct_lock_admits_p2_under_same_script():
    rep = starvation_scenario(rounds=200, faulty=False)
    assert not rep.starved


def test_faulty_lock_without_aborts_admits_p2():
    rep = starvation_scenario(rounds=200, aborts=False)
    assert not rep.starved


def test_oracle_allocator_shows_the_same_starvation():
    rep = starvation_scenario(rounds=100, reclaim=False)
    assert rep.starved
