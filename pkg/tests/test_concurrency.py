import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from lgmtraj.dynamic import DynamicTrajectory, OutcomeKind
from lgmtraj.sim import RaceConfig, run_race


def test_reader_never_sees_torn_state(course, limits):
    with ThreadPoolExecutor(max_workers=1) as ex:
        d = DynamicTrajectory.build(course, limits, timing="wall", executor=ex)
        published = {(d.epoch, len(d.state.bank))}
        stop = threading.Event()
        seen = []
        errors = []

        def reader():
            try:
                while not stop.is_set():
                    s = d.sample(1.7)
                    seen.append((s.epoch, s.modifier_count, s.position.copy()))
            except Exception as exc:  # pragma: no cover - surfaced below
                errors.append(exc)

        th = threading.Thread(target=reader)
        th.start()
        t = 0.1
        for k in range(30):
            w = d.state.next_waypoint(t)
            target = np.array(course[w.id].position) + [0, 0.02 * (k % 5), 0]
            out = d.modify_waypoint(w.id, target, t)
            if out.regeneration is not None:
                out.regeneration.future.result()
                d.advance(out.regeneration.ready_at)
            published.add((d.epoch, len(d.state.bank)))
            t += 0.05
        stop.set()
        th.join()

    assert not errors
    assert seen
    epochs = [e for e, _, _ in seen]
    assert epochs == sorted(epochs)
    assert all(np.isfinite(p).all() for _, _, p in seen)
    assert {(e, m) for e, m, _ in seen} <= published


def test_wall_mode_solve_runs_off_thread(course, limits):
    main = threading.get_ident()
    ids = []
    with ThreadPoolExecutor(max_workers=1) as ex:
        d = DynamicTrajectory.build(course, limits, timing="wall", executor=ex)
        ex.submit(lambda: ids.append(threading.get_ident())).result()
        out = d.modify_waypoint(4, (16, 0.5, 1), 0.2)
        assert out.kind is OutcomeKind.REGENERATED
        out.regeneration.future.result()
        done = d.advance(out.regeneration.ready_at)
    assert ids and ids[0] != main
    assert done is not None and d.epoch == 1


def test_wall_mode_race_completes():
    res = run_race(RaceConfig(laps=2, speed_limit=10, timing="wall"), seed=3)
    assert res.solver_failures == 0
    assert len(res.gate_log) == 8
    assert res.success_rate >= 0.75
