from fuselab.instrumentation import CROSS, LOCAL, PropagationBroker, PropagationCounter, broker, counting


def test_counter_only_hears_its_topics():
    local_broker = PropagationBroker()
    with counting(CROSS, provider=local_broker) as counter:
        local_broker.publish(CROSS)
        local_broker.publish(CROSS)
        local_broker.publish(LOCAL)
    assert counter[CROSS] == 2
    assert counter[LOCAL] == 0


def test_counting_unsubscribes_on_exit():
    local_broker = PropagationBroker()
    with counting(provider=local_broker) as counter:
        local_broker.publish(LOCAL)
    local_broker.publish(LOCAL)
    assert counter.counts == {LOCAL: 1}
    assert local_broker.recorders == {LOCAL: [], CROSS: []}


def test_several_recorders_share_a_topic():
    local_broker = PropagationBroker()
    first, second = PropagationCounter(), PropagationCounter()
    local_broker.subscribe(LOCAL, first)
    local_broker.subscribe(LOCAL, second)
    local_broker.publish(LOCAL)
    assert first[LOCAL] == second[LOCAL] == 1


def test_nothing_listens_by_default():
    assert all(recorders == [] for recorders in broker.recorders.values())
