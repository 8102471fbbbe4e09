import pytest

from libtailsampler.log_templater import (EMPTY_TEMPLATE_ID, WILDCARD, EventKind, EventManager,
                                          TemplateStore, log_event_key, mask_token)


def test_mask_token_variables():
    assert mask_token("42") == WILDCARD
    assert mask_token("-3.5") == WILDCARD
    assert mask_token("0x1f2e3d4c5b") == WILDCARD
    assert mask_token("123e4567-e89b-12d3-a456-426614174000") == WILDCARD
    assert mask_token("route") == "route"


def test_numeric_variables_share_a_template():
    store = TemplateStore()
    a = store.template_of("Query returned 5 rows in 10 ms")
    b = store.template_of("Query returned 700 rows in 3 ms")
    assert a == b
    assert store.template(a) == "Query returned <*> rows in <*> ms"


def test_different_shapes_get_different_templates():
    store = TemplateStore()
    a = store.template_of("Connection pool active size 3")
    b = store.template_of("Cache lookup finished with 3 entries")
    c = store.template_of("Station id 42 not found in registry")
    assert len({a, b, c}) == 3
    assert EMPTY_TEMPLATE_ID not in (a, b, c)


def test_similar_messages_merge_and_keep_their_id():
    store = TemplateStore()
    first = store.template_of("Loaded routing table alpha")
    second = store.template_of("Loaded routing table beta")
    assert first == second
    assert store.template(first) == "Loaded routing table <*>"
    # an exact repeat stays on its id after the cluster widened
    assert store.template_of("Loaded routing table alpha") == first


def test_blank_message_is_the_empty_template():
    store = TemplateStore()
    assert store.template_of("   ") == EMPTY_TEMPLATE_ID
    assert store.template(EMPTY_TEMPLATE_ID) == "<EMPTY>"


def test_external_ids_live_beside_mined_ones():
    store = TemplateStore()
    mined = store.template_of("Price calculation failed for train type 7")
    store.register_external(mined)
    assert mined == 1
    assert store.template_of("Seat map refreshed for carriage 3") == 2
    assert {(r["template_id"], r["source"]) for r in store.dump_records()} == {
        (EMPTY_TEMPLATE_ID, "mined"), (1, "mined"), (2, "mined"), (1, "external")}
    assert len(store) == 4


def test_upstream_and_mined_ids_are_different_events():
    mgr = EventManager()
    mined = mgr.event_id(EventKind.LOG, log_event_key(1))
    upstream = mgr.event_id(EventKind.LOG, log_event_key(1, external=True))
    assert mined != upstream
    assert mgr.label(upstream) == "LOG:ext:1"
    assert mgr.label(mined) == "LOG:tpl:1"


def test_variable_values_do_not_grow_the_memo():
    store = TemplateStore()
    ids = {store.template_of(f"Query returned {i} rows in {3 * i} ms") for i in range(5000)}
    assert len(ids) == 1
    assert len(store._by_shape) == 1
    assert len(store.templates) == 2


def test_store_rejects_bad_parameters():
    with pytest.raises(ValueError):
        TemplateStore(depth=2)
    with pytest.raises(ValueError):
        TemplateStore(similarity_threshold=0.0)


def test_event_ids_are_assigned_in_first_encounter_order():
    mgr = EventManager()
    start_a = mgr.event_id(EventKind.SPAN_START, "a/op")
    log_7 = mgr.event_id(EventKind.LOG, 7)
    end_a = mgr.event_id(EventKind.SPAN_END, "a/op")
    assert (start_a, log_7, end_a) == (1, 2, 3)
    assert mgr.event_id(EventKind.LOG, 7) == 2
    assert len(mgr) == 3
    assert mgr.describe(3) == (EventKind.SPAN_END, "a/op")
    assert mgr.label(2) == "LOG:7"


def test_event_kinds_do_not_collide_on_the_same_key():
    mgr = EventManager()
    ids = {mgr.event_id(kind, "svc/op") for kind in EventKind}
    assert len(ids) == len(EventKind)


def test_describe_unknown_id():
    mgr = EventManager()
    with pytest.raises(KeyError):
        mgr.describe(1)
