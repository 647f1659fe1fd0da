"""Agent membership state machine, tenant-scoped views, sealed payloads."""

import itertools
import os
import random

import pytest

from adapter_fabric.errors import FabricError
from adapter_fabric.overlay import (
    DEFAULT_HEARTBEAT_SECS,
    HEARTBEAT_ENV_VAR,
    STATE_HEALTHY,
    STATE_JOINING,
    STATE_SUSPECT,
    STATE_UNAVAILABLE,
    Heartbeat,
    KeyRing,
    Overlay,
    SealedEnvelope,
    heartbeat_interval_from_env,
    open_envelope,
    seal,
)

from support import healthy_agent


def register(overlay, agent_id="a1", tenant="t1", now=0, **kw):
    args = dict(tenant_id=tenant, base_model_id="llama-7b", max_concurrency=4, now=now)
    args.update(kw)
    return overlay.register_agent(agent_id, **args)


def beat(overlay, agent_id="a1", seq=1, active=0, now=0):
    return overlay.process_heartbeat(
        Heartbeat(agent_id=agent_id, seq=seq, active_requests=active, sent_at=now), now=now
    )


class TestRegistration:
    def test_fresh_agent_is_joining_with_seq_zero(self):
        overlay = Overlay()
        record = register(overlay)
        assert record.state == STATE_JOINING
        assert record.last_seq == 0
        assert record.active_requests == 0

    def test_duplicate_live_agent_rejected(self):
        overlay = Overlay()
        register(overlay)
        for state_setup in (lambda: None, lambda: beat(overlay)):
            state_setup()
            with pytest.raises(FabricError) as exc:
                register(overlay)
            assert exc.value.code == "DUPLICATE_AGENT"

    def test_reregister_after_unavailable_resets(self):
        overlay = Overlay()
        register(overlay, now=0)
        beat(overlay, seq=7, active=3, now=0)
        overlay.sweep(now=1_000_000, interval_s=5)
        assert overlay.get_agent("a1").state == STATE_UNAVAILABLE
        record = register(overlay, now=2_000_000)
        assert record.state == STATE_JOINING
        assert record.last_seq == 0
        assert record.active_requests == 0

    def test_unknown_agent_lookup(self):
        overlay = Overlay()
        with pytest.raises(FabricError) as exc:
            overlay.get_agent("ghost")
        assert exc.value.code == "UNKNOWN_AGENT"


class TestHeartbeats:
    def test_first_heartbeat_promotes_joining_to_healthy(self):
        overlay = Overlay()
        register(overlay)
        record = beat(overlay, seq=1, active=2, now=42)
        assert record.state == STATE_HEALTHY
        assert record.last_seq == 1
        assert record.active_requests == 2
        assert record.last_heartbeat_at == 42

    def test_stale_seq_discarded_silently(self):
        overlay = Overlay()
        register(overlay)
        beat(overlay, seq=7, active=1, now=10)
        unchanged = beat(overlay, seq=5, active=9, now=20)
        assert unchanged.last_seq == 7
        assert unchanged.active_requests == 1
        assert unchanged.last_heartbeat_at == 10

    def test_equal_seq_discarded(self):
        overlay = Overlay()
        register(overlay)
        beat(overlay, seq=3, active=1, now=10)
        unchanged = beat(overlay, seq=3, active=9, now=20)
        assert unchanged.active_requests == 1

    def test_suspect_recovers_on_fresh_heartbeat(self):
        overlay = Overlay()
        register(overlay, now=0)
        beat(overlay, seq=1, now=0)
        overlay.sweep(now=11_000, interval_s=5)
        assert overlay.get_agent("a1").state == STATE_SUSPECT
        record = beat(overlay, seq=2, now=12_000)
        assert record.state == STATE_HEALTHY

    def test_unavailable_recovers_on_fresh_heartbeat(self):
        overlay = Overlay()
        register(overlay, now=0)
        beat(overlay, seq=1, now=0)
        overlay.sweep(now=60_000, interval_s=5)
        assert overlay.get_agent("a1").state == STATE_UNAVAILABLE
        record = beat(overlay, seq=2, now=61_000)
        assert record.state == STATE_HEALTHY

    def test_unregistered_agent_heartbeat(self):
        overlay = Overlay()
        with pytest.raises(FabricError) as exc:
            beat(overlay)
        assert exc.value.code == "UNKNOWN_AGENT"

    def test_permutation_of_heartbeats_yields_same_record(self):
        beats = [
            Heartbeat(agent_id="a1", seq=s, active_requests=s * 2, sent_at=s)
            for s in (1, 2, 3, 4)
        ]
        finals = set()
        for perm in itertools.permutations(beats):
            overlay = Overlay()
            register(overlay)
            for hb in perm:
                overlay.process_heartbeat(hb, now=100)
            finals.add(overlay.get_agent("a1"))
        assert len(finals) == 1
        record = finals.pop()
        assert record.last_seq == 4
        assert record.active_requests == 8


class TestSweep:
    def test_thresholds(self):
        # (silence_ms, expected state after one sweep at interval 5 s)
        cases = [
            (9_999, STATE_HEALTHY),
            (10_000, STATE_HEALTHY),  # exactly 2x is not yet silent enough
            (10_001, STATE_SUSPECT),
            (11_000, STATE_SUSPECT),
            (15_000, STATE_SUSPECT),
            (15_001, STATE_UNAVAILABLE),
            (16_000, STATE_UNAVAILABLE),
        ]
        for silence, expected in cases:
            overlay = Overlay()
            register(overlay, now=0)
            beat(overlay, seq=1, now=0)
            overlay.sweep(now=silence, interval_s=5)
            assert overlay.get_agent("a1").state == expected, silence

    def test_joining_agents_never_swept(self):
        overlay = Overlay()
        register(overlay, now=0)
        changes = overlay.sweep(now=10_000_000, interval_s=5)
        assert changes == []
        assert overlay.get_agent("a1").state == STATE_JOINING

    def test_unavailable_agents_not_reported_again(self):
        overlay = Overlay()
        register(overlay, now=0)
        beat(overlay, seq=1, now=0)
        overlay.sweep(now=60_000, interval_s=5)
        changes = overlay.sweep(now=120_000, interval_s=5)
        assert changes == []

    def test_long_silence_reports_both_steps(self):
        overlay = Overlay()
        register(overlay, now=0)
        beat(overlay, seq=1, now=0)
        changes = overlay.sweep(now=60_000, interval_s=5)
        assert [(c.old_state, c.new_state) for c in changes] == [
            (STATE_HEALTHY, STATE_SUSPECT),
            (STATE_SUSPECT, STATE_UNAVAILABLE),
        ]

    def test_scripted_timeline(self):
        overlay = Overlay()
        register(overlay, now=0)
        for i, t in enumerate((0, 5_000, 10_000), start=1):
            beat(overlay, seq=i, now=t)
        assert overlay.get_agent("a1").state == STATE_HEALTHY

        changes = overlay.sweep(now=21_000, interval_s=5)
        assert [(c.agent_id, c.new_state) for c in changes] == [("a1", STATE_SUSPECT)]

        changes = overlay.sweep(now=26_000, interval_s=5)
        assert [(c.agent_id, c.new_state) for c in changes] == [("a1", STATE_UNAVAILABLE)]

    def test_invalid_interval(self):
        overlay = Overlay()
        with pytest.raises(FabricError):
            overlay.sweep(now=0, interval_s=0)

    def test_interval_env_override(self):
        old = os.environ.get(HEARTBEAT_ENV_VAR)
        try:
            os.environ[HEARTBEAT_ENV_VAR] = "2.5"
            assert heartbeat_interval_from_env() == 2.5
            os.environ.pop(HEARTBEAT_ENV_VAR)
            assert heartbeat_interval_from_env() == DEFAULT_HEARTBEAT_SECS
        finally:
            if old is not None:
                os.environ[HEARTBEAT_ENV_VAR] = old
            else:
                os.environ.pop(HEARTBEAT_ENV_VAR, None)


class TestStateMachineTotality:
    def test_every_state_event_pair(self):
        """Each (state, event) cell of the transition table, exhaustively."""
        interval = 5

        def agent_in_state(state):
            overlay = Overlay()
            register(overlay, now=0)
            if state == STATE_JOINING:
                return overlay
            beat(overlay, seq=1, now=0)
            if state == STATE_HEALTHY:
                return overlay
            overlay.sweep(now=11_000, interval_s=interval)
            if state == STATE_SUSPECT:
                return overlay
            overlay.sweep(now=16_000, interval_s=interval)
            assert overlay.get_agent("a1").state == STATE_UNAVAILABLE
            return overlay

        # (state, event) -> expected state afterwards
        table = {
            (STATE_JOINING, "heartbeat"): STATE_HEALTHY,
            (STATE_JOINING, "stale"): STATE_JOINING,
            (STATE_JOINING, "sweep_short"): STATE_JOINING,
            (STATE_JOINING, "sweep_long"): STATE_JOINING,
            (STATE_HEALTHY, "heartbeat"): STATE_HEALTHY,
            (STATE_HEALTHY, "stale"): STATE_HEALTHY,
            (STATE_HEALTHY, "sweep_short"): STATE_SUSPECT,
            (STATE_HEALTHY, "sweep_long"): STATE_UNAVAILABLE,
            (STATE_SUSPECT, "heartbeat"): STATE_HEALTHY,
            (STATE_SUSPECT, "stale"): STATE_SUSPECT,
            (STATE_SUSPECT, "sweep_short"): STATE_SUSPECT,
            (STATE_SUSPECT, "sweep_long"): STATE_UNAVAILABLE,
            (STATE_UNAVAILABLE, "heartbeat"): STATE_HEALTHY,
            (STATE_UNAVAILABLE, "stale"): STATE_UNAVAILABLE,
            (STATE_UNAVAILABLE, "sweep_short"): STATE_UNAVAILABLE,
            (STATE_UNAVAILABLE, "sweep_long"): STATE_UNAVAILABLE,
        }
        for (state, event), expected in table.items():
            overlay = agent_in_state(state)
            if event == "heartbeat":
                beat(overlay, seq=50, now=100_000)
            elif event == "stale":
                # seq 0 is never newer than any accepted or initial seq
                overlay.process_heartbeat(
                    Heartbeat(agent_id="a1", seq=0, active_requests=9, sent_at=0), now=100_000
                )
            elif event == "sweep_short":
                # silent for just over 2 intervals past the last beat at t=0
                overlay.sweep(now=10_001, interval_s=interval)
            else:
                overlay.sweep(now=1_000_000, interval_s=interval)
            assert overlay.get_agent("a1").state == expected, (state, event)


class TestTenantViews:
    def test_filter_by_tenant(self):
        overlay = Overlay()
        register(overlay, "a1", tenant="t1")
        register(overlay, "a2", tenant="t1")
        register(overlay, "b1", tenant="t2")
        view = overlay.view_for_tenant("t1")
        assert sorted(a.agent_id for a in view) == ["a1", "a2"]

    def test_shared_agents_visible_to_all(self):
        overlay = Overlay()
        register(overlay, "shared1", tenant="ops", shared=True)
        register(overlay, "b1", tenant="t2")
        assert [a.agent_id for a in overlay.view_for_tenant("t9")] == ["shared1"]
        assert sorted(a.agent_id for a in overlay.view_for_tenant("t2")) == ["b1", "shared1"]

    def test_empty_overlay(self):
        overlay = Overlay()
        assert len(overlay.view_for_tenant("t1")) == 0

    def test_multi_tenant_view_unions(self):
        overlay = Overlay()
        register(overlay, "a1", tenant="t1")
        register(overlay, "b1", tenant="t2")
        register(overlay, "c1", tenant="t3")
        view = overlay.view_for_tenants(frozenset({"t1", "t2"}))
        assert sorted(a.agent_id for a in view) == ["a1", "b1"]

    def test_isolation_over_random_worlds(self):
        rng = random.Random(31)
        for _ in range(200):
            overlay = Overlay()
            tenants = [f"t{i}" for i in range(rng.randint(1, 5))]
            placement = {}
            for i in range(rng.randint(0, 12)):
                tenant = rng.choice(tenants)
                shared = rng.random() < 0.25
                agent_id = f"agent{i}"
                register(overlay, agent_id, tenant=tenant, shared=shared)
                placement[agent_id] = (tenant, shared)
            for tenant in tenants:
                ids = {a.agent_id for a in overlay.view_for_tenant(tenant)}
                expected = {
                    aid for aid, (t, shared) in placement.items()
                    if shared or t == tenant
                }
                assert ids == expected


class TestDispatchAccounting:
    def test_begin_end_dispatch(self):
        overlay = Overlay()
        healthy_agent(overlay, "a1")
        overlay.begin_dispatch("a1")
        overlay.begin_dispatch("a1")
        assert overlay.get_agent("a1").active_requests == 2
        overlay.end_dispatch("a1")
        assert overlay.get_agent("a1").active_requests == 1

    def test_end_dispatch_floors_at_zero(self):
        overlay = Overlay()
        healthy_agent(overlay, "a1")
        overlay.end_dispatch("a1")
        assert overlay.get_agent("a1").active_requests == 0


class TestSealedEnvelopes:
    def test_round_trip(self):
        key = os.urandom(32)
        envelope = seal(key, b"hello payload", b"agent-1:/generate", "t1")
        assert open_envelope(key, envelope) == b"hello payload"

    def test_wrong_key_fails(self):
        envelope = seal(os.urandom(32), b"x", b"ad", "t1")
        with pytest.raises(FabricError) as exc:
            open_envelope(os.urandom(32), envelope)
        assert exc.value.code == "DECRYPT_FAILED"

    def test_key_must_be_32_bytes(self):
        with pytest.raises(FabricError):
            seal(b"short", b"x", b"ad", "t1")

    def test_nonces_unique_across_seals(self):
        key = os.urandom(32)
        nonces = {seal(key, b"x", b"ad", "t1").nonce for _ in range(200)}
        assert len(nonces) == 200

    def test_single_bit_flips_rejected(self):
        rng = random.Random(41)
        key = os.urandom(32)
        rejected = 0
        trials = 300
        for _ in range(trials):
            plaintext = bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 50)))
            envelope = seal(key, plaintext, b"route", "t1")
            field = rng.choice(["ciphertext", "nonce", "associated_data"])
            data = bytearray(getattr(envelope, field))
            data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)
            from dataclasses import replace

            tampered = replace(envelope, **{field: bytes(data)})
            try:
                open_envelope(key, tampered)
            except FabricError as exc:
                assert exc.code == "DECRYPT_FAILED"
                rejected += 1
        assert rejected == trials

    def test_envelope_json_round_trip(self):
        key = os.urandom(32)
        envelope = seal(key, b"payload bytes", b"ad bytes", "tenant-9")
        wire = envelope.to_json()
        parsed = SealedEnvelope.from_json(wire)
        assert parsed == envelope
        assert open_envelope(key, parsed) == b"payload bytes"

    def test_malformed_envelope_json(self):
        for junk in (b"not json", b"{}", b'{"ciphertext": "!!!"}'):
            with pytest.raises(FabricError) as exc:
                SealedEnvelope.from_json(junk)
            assert exc.value.code == "DECRYPT_FAILED"


class TestKeyRing:
    def test_provision_and_get(self):
        ring = KeyRing()
        key = ring.provision("t1")
        assert len(key) == 32
        assert ring.get("t1") == key
        assert ring.get("t2") is None

    def test_provision_explicit_key(self):
        ring = KeyRing()
        key = os.urandom(32)
        assert ring.provision("t1", key) == key
        assert ring.get("t1") == key

    def test_export_load_round_trip(self):
        ring = KeyRing()
        ring.provision("t1")
        ring.provision("t2")
        doc = ring.export()
        fresh = KeyRing()
        fresh.load(doc)
        assert fresh.get("t1") == ring.get("t1")
        assert fresh.get("t2") == ring.get("t2")
