"""Compiled simulation step kernel.

State lives in flat numpy arrays (struct-of-arrays vehicle pool with
per-lane FIFO linked lists); the whole transition for a step runs inside
njit code so multi-hour grid runs finish in seconds.

Per operation step (dt) the transition is, in order:

1. signal decision every T steps: snapshot counts, metric -> weight ->
   pressure -> argmax per intersection, switch with lost time, reset the
   per-movement metric windows;
2. per movement: discharge credit accrues at the saturation rate while the
   serving phase is active and past its lost time (leaky bucket, so unused
   green is not banked beyond one vehicle); credit clears on red;
3. per lane, front to back: stopped head vehicles cross the stop line while
   whole credits are available and the downstream link admits them; moving
   vehicles that reach the line without ever having stopped on the link
   depart freely on green; everything else advances toward the predecessor
   or the stop line;
4. Poisson arrivals join per-entry boundary queues and are admitted FIFO
   while the entry link has storage and rear headroom;
5. ledger accumulation and the exact conservation check.

Two kinematic modes share the pipeline.  ``analytic`` keeps the idealized
store-and-forward accounting: a vehicle either covers a full free-flow step
or is a member of the stop-line queue (joining costs nothing, queued steps
cost the whole step), queues compact by slot reassignment, and internal
storage is unbounded.  ``meso`` moves vehicles by their actual feasible
advance, classifies anything below the halting speed as stopped, and
enforces finite storage with jam-spacing headroom.

Movement-window attribution happens exactly once per vehicle per step, on
the movement the vehicle occupied at the step start, in lane-walk order;
this fixed order is what lets the test oracle reproduce every accumulator
bit-for-bit from the event log.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .rng import STREAM_ARRIVAL, STREAM_TAG, STREAM_TURN, poisson_count, uniform
from .controllers import metric_values, phase_pressures, select_phases, weights_from_metrics

# counter slots (CTR int64 array)
C_CREATED = 0
C_ENTERED = 1
C_EXITED = 2
C_BLOCKED = 3
C_LIVE = 4
C_FSTOP = 5
C_HWM = 6
C_VIOL = 7
C_OVERFLOW = 8
C_EVN = 9
C_NSTOP = 10
N_CTR = 12

# float accumulator slots (FCTR float64 array)
F_WAIT = 0
F_DELAY = 1
F_EXIT_DELAY = 2
F_STOP_SUM = 3
F_LIVE_SUM = 4
N_FCTR = 6

KIND_EXIT = 2


@njit(cache=True, inline="always")
def _draw_turn(seed, vid, hop, link, link_out_start, link_out_mov, mov_ratio):
    u = uniform(seed, STREAM_TURN, vid, hop)
    lo, hi = link_out_start[link], link_out_start[link + 1]
    cum = 0.0
    for k in range(lo, hi):
        cum += mov_ratio[link_out_mov[k]]
        if u < cum:
            return link_out_mov[k]
    return link_out_mov[hi - 1]


@njit(cache=True, inline="always")
def _attribute(m, e, stopped, cv, k,
               w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
               tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
               vid, ctr):
    s = 1 if stopped else 0
    w_cnt[m] += 1
    w_stop[m] += s
    w_dist[m] += e
    if cv:
        w_cnt_cv[m] += 1
        w_stop_cv[m] += s
        w_dist_cv[m] += e
    if tr_step.shape[0] > k:
        tr_step[k, m, 0] += 1.0
        tr_step[k, m, 1] += s
        tr_step[k, m, 2] += e
    if ev_step.shape[0] > 0:
        n = ctr[C_EVN]
        if n < ev_step.shape[0]:
            ev_step[n] = k
            ev_veh[n] = vid
            ev_mov[n] = m
            ev_e[n] = e
            ev_stop[n] = stopped
            ev_cv[n] = cv
            ctr[C_EVN] = n + 1
        else:
            ctr[C_OVERFLOW] = 2


@njit(cache=True)
def run_steps(k0, k1, prm, net, rates, sched,
              veh, lanes, movs, ints, scr, ctr, fctr, fs, led, ser, tr):
    (seed, dt, T_steps, lost_time, variant, analytic, cap_infinite,
     p, inv_scale, use_cv, all_green, use_sched, jam, n_min) = prm
    (link_kind, link_len, link_vf, link_cap, link_lane0, lane_link,
     mov_up, mov_down, mov_ratio, mov_sat, mov_lane, mov_int, mov_phase,
     mov_to_exit, int_phase_start, phase_int, phase_mov_start, phase_mov,
     link_out_start, link_out_mov, lane_mov_start, lane_mov, lane_rate,
     entry_links, entry_is_ns) = net
    (v_pos, v_mov, v_lane, v_next, v_stopped, v_everstop, v_cv, v_seq,
     v_hops, v_tnet, v_tcreated, v_fft, v_laststep) = veh
    (lane_head, lane_tail, link_n, bq_head, bq_tail, bq_n, l_acc) = lanes
    (m_n, m_ns, m_n_cv, m_ns_cv,
     w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
     m_green, m_open, m_served) = movs
    (i_active, i_lost, i_since) = ints
    (mtr, wgt, prs, sel) = scr
    (led_delay, led_vehsum, led_blocksum, led_steps,
     led_entered, led_exited, led_wait) = led
    (s_created, s_live, s_exited, s_blocked) = ser
    (tr_dec_sel, tr_dec_pressure, tr_dec_weight, tr_win, tr_snap, tr_step,
     ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv) = tr

    n_lanes = lane_link.shape[0]
    n_mov = mov_up.shape[0]
    n_int = int_phase_start.shape[0] - 1
    pool = v_pos.shape[0]
    halt_dist = 0.1 * dt
    T_sec = T_steps * dt

    for k in range(k0, k1):
        t = k * dt
        minute = int(t // 60.0)
        if minute >= n_min:
            minute = n_min - 1

        # ------------------------------------------------ signal decision
        if not all_green and T_steps > 0 and k % T_steps == 0:
            d = k // T_steps
            if tr_win.shape[0] > d:
                for m in range(n_mov):
                    tr_win[d, m, 0] = w_cnt[m]
                    tr_win[d, m, 1] = w_stop[m]
                    tr_win[d, m, 2] = w_dist[m]
                    tr_win[d, m, 3] = w_cnt_cv[m]
                    tr_win[d, m, 4] = w_stop_cv[m]
                    tr_win[d, m, 5] = w_dist_cv[m]
                    tr_snap[d, m, 0] = m_n[m]
                    tr_snap[d, m, 1] = m_ns[m]
                    tr_snap[d, m, 2] = m_n_cv[m]
                    tr_snap[d, m, 3] = m_ns_cv[m]
            if use_sched:
                row = d % sched.shape[0]
                for i in range(n_int):
                    g = int_phase_start[i] + sched[row, i]
                    if g != i_active[i]:
                        i_active[i] = g
                        i_lost[i] = lost_time
                        i_since[i] = 0
            else:
                scale = (1.0 / p) if inv_scale else 1.0
                if use_cv:
                    metric_values(variant, dt, scale, w_cnt_cv, w_stop_cv,
                                  w_dist_cv, m_n_cv, m_ns_cv, mov_up, link_vf, mtr)
                else:
                    metric_values(variant, dt, scale, w_cnt, w_stop,
                                  w_dist, m_n, m_ns, mov_up, link_vf, mtr)
                weights_from_metrics(mtr, link_out_start, link_out_mov,
                                     mov_down, mov_ratio, wgt)
                phase_pressures(wgt, mov_sat, phase_mov_start, phase_mov,
                                phase_int, i_active, T_sec, lost_time, prs)
                select_phases(prs, int_phase_start, i_active, sel)
                for i in range(n_int):
                    if sel[i] != i_active[i]:
                        i_active[i] = sel[i]
                        i_lost[i] = lost_time
                        i_since[i] = 0
                if tr_dec_pressure.shape[0] > d:
                    for g in range(prs.shape[0]):
                        tr_dec_pressure[d, g] = prs[g]
                    for m in range(n_mov):
                        tr_dec_weight[d, m] = wgt[m]
            if tr_dec_sel.shape[0] > d:
                for i in range(n_int):
                    tr_dec_sel[d, i] = i_active[i] - int_phase_start[i]
            for m in range(n_mov):
                w_cnt[m] = 0
                w_stop[m] = 0
                w_dist[m] = 0.0
                w_cnt_cv[m] = 0
                w_stop_cv[m] = 0
                w_dist_cv[m] = 0.0

        # ------------------------------------------------ green flags, credit
        for m in range(n_mov):
            i = mov_int[m]
            green = all_green or i_active[i] == mov_phase[m]
            m_green[m] = green
            m_open[m] = green and (all_green or i_lost[i] <= 0.0)
        # discharge credit accrues per lane at the open movements' total rate
        for lane in range(n_lanes):
            rate = 0.0
            for idx in range(lane_mov_start[lane], lane_mov_start[lane + 1]):
                if m_open[lane_mov[idx]]:
                    rate += mov_sat[lane_mov[idx]]
            if rate > 0.0:
                cap = 1.0 + rate * dt
                a = l_acc[lane] + rate * dt
                l_acc[lane] = a if a < cap else cap
            else:
                l_acc[lane] = 0.0
        for i in range(n_int):
            if i_lost[i] > 0.0:
                i_lost[i] -= dt
                if i_lost[i] < 1e-12:
                    i_lost[i] = 0.0
            i_since[i] += 1

        # ------------------------------------------------ lane transitions
        step_delay = 0.0
        for lane in range(n_lanes):
            link = lane_link[lane]
            L = link_len[link]
            vf = link_vf[link]
            advmax = vf * dt

            # credited discharge of the stopped queue head
            nrel = 0
            while True:
                h = lane_head[lane]
                if h < 0 or not v_stopped[h]:
                    break
                m = v_mov[h]
                if not m_open[m] or l_acc[lane] < 1.0:
                    break
                dn = mov_down[m]
                to_exit = link_kind[dn] == KIND_EXIT
                nm = -1
                if not to_exit:
                    # suppressed only when the downstream link is full by
                    # storage count; vehicles compress at the entrance rather
                    # than deadlocking on entrance headroom
                    if not cap_infinite and link_n[dn] >= link_cap[dn]:
                        break
                    nm = _draw_turn(seed, v_seq[h], v_hops[h] + 1, dn,
                                    link_out_start, link_out_mov, mov_ratio)
                l_acc[lane] -= 1.0
                # queue members sit at the stop line in the point-queue view;
                # their crossing covers no distance under analytic accounting
                e = 0.0 if analytic else L - v_pos[h]
                cv = v_cv[h]
                _attribute(m, e, e < halt_dist, cv, k,
                           w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
                           tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
                           v_seq[h], ctr)
                step_delay += dt - e / vf
                lane_head[lane] = v_next[h]
                if lane_head[lane] < 0:
                    lane_tail[lane] = -1
                v_next[h] = -1
                nrel += 1
                m_served[m] += 1
                link_n[link] -= 1
                m_n[m] -= 1
                m_ns[m] -= 1
                ctr[C_NSTOP] -= 1
                if cv:
                    m_n_cv[m] -= 1
                    m_ns_cv[m] -= 1
                if to_exit:
                    ctr[C_EXITED] += 1
                    ctr[C_LIVE] -= 1
                    fctr[F_EXIT_DELAY] += (t + dt - v_tnet[h]) - (v_fft[h] + L / vf)
                    fs[ctr[C_FSTOP]] = h
                    ctr[C_FSTOP] += 1
                else:
                    nl = mov_lane[nm]
                    v_pos[h] = 0.0
                    v_mov[h] = nm
                    v_lane[h] = nl
                    v_stopped[h] = False
                    v_everstop[h] = False
                    v_hops[h] += 1
                    v_fft[h] += L / vf
                    v_laststep[h] = k
                    tl = lane_tail[nl]
                    if tl < 0:
                        lane_head[nl] = h
                    else:
                        v_next[tl] = h
                    lane_tail[nl] = h
                    link_n[dn] += 1
                    m_n[nm] += 1
                    if cv:
                        m_n_cv[nm] += 1

            # the stop-line queue compacts to its slots after releases (pure
            # bookkeeping: queue members advance by service, not kinematics)
            if nrel > 0:
                j = 0
                x = lane_head[lane]
                while x >= 0 and v_stopped[x]:
                    slot = L - j * jam
                    if slot < v_pos[x]:
                        slot = v_pos[x]
                    v_pos[x] = slot if slot > 0.0 else 0.0
                    j += 1
                    x = v_next[x]

            # free-flow crossings: moving front vehicles that reach the line
            # on green without ever having stopped on this link
            while True:
                h = lane_head[lane]
                if h < 0 or v_stopped[h] or v_laststep[h] == k or v_everstop[h]:
                    break
                m = v_mov[h]
                target = v_pos[h] + advmax
                if target < L or not m_green[m]:
                    break
                dn = mov_down[m]
                to_exit = link_kind[dn] == KIND_EXIT
                cv = v_cv[h]
                if to_exit:
                    e = advmax if analytic else L - v_pos[h]
                    _attribute(m, e, e < halt_dist, cv, k,
                               w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
                               tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
                               v_seq[h], ctr)
                    step_delay += dt - e / vf
                    lane_head[lane] = v_next[h]
                    if lane_head[lane] < 0:
                        lane_tail[lane] = -1
                    v_next[h] = -1
                    m_served[m] += 1
                    link_n[link] -= 1
                    m_n[m] -= 1
                    if cv:
                        m_n_cv[m] -= 1
                    ctr[C_EXITED] += 1
                    ctr[C_LIVE] -= 1
                    fctr[F_EXIT_DELAY] += (t + dt - v_tnet[h]) - (v_fft[h] + L / vf)
                    fs[ctr[C_FSTOP]] = h
                    ctr[C_FSTOP] += 1
                    continue
                if not cap_infinite and link_n[dn] >= link_cap[dn]:
                    break
                nm = _draw_turn(seed, v_seq[h], v_hops[h] + 1, dn,
                                link_out_start, link_out_mov, mov_ratio)
                nl = mov_lane[nm]
                leftover = target - L
                tl = lane_tail[nl]
                if tl >= 0:
                    room = v_pos[tl] - jam
                    if room < 0.0:
                        room = 0.0
                    if leftover > room:
                        leftover = room
                e = advmax if analytic else (L - v_pos[h]) + leftover
                _attribute(m, e, e < halt_dist, cv, k,
                           w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
                           tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
                           v_seq[h], ctr)
                step_delay += dt - e / vf
                lane_head[lane] = v_next[h]
                if lane_head[lane] < 0:
                    lane_tail[lane] = -1
                v_next[h] = -1
                m_served[m] += 1
                link_n[link] -= 1
                m_n[m] -= 1
                if cv:
                    m_n_cv[m] -= 1
                v_pos[h] = leftover
                v_mov[h] = nm
                v_lane[h] = nl
                v_hops[h] += 1
                v_fft[h] += L / vf
                v_laststep[h] = k
                tl = lane_tail[nl]
                if tl < 0:
                    lane_head[nl] = h
                else:
                    v_next[tl] = h
                lane_tail[nl] = h
                link_n[dn] += 1
                m_n[nm] += 1
                if cv:
                    m_n_cv[nm] += 1

            # advance pass for everything still on the lane
            pred = -1
            nstop_ahead = 0
            x = lane_head[lane]
            while x >= 0:
                nxt = v_next[x]
                if v_laststep[x] == k:
                    pred = x
                    x = nxt
                    continue
                m = v_mov[x]
                cv = v_cv[x]
                if analytic:
                    if v_stopped[x]:
                        _attribute(m, 0.0, True, cv, k,
                                   w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
                                   tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
                                   v_seq[x], ctr)
                        step_delay += dt
                        nstop_ahead += 1
                    else:
                        target = v_pos[x] + advmax
                        join_slot = L - nstop_ahead * jam
                        if join_slot < 0.0:
                            join_slot = 0.0
                        joins = target >= join_slot and (nstop_ahead > 0 or not m_green[m])
                        if joins:
                            v_pos[x] = join_slot
                            v_stopped[x] = True
                            v_everstop[x] = True
                            m_ns[m] += 1
                            ctr[C_NSTOP] += 1
                            if cv:
                                m_ns_cv[m] += 1
                            nstop_ahead += 1
                        else:
                            v_pos[x] = target if target < L else L
                        _attribute(m, advmax, False, cv, k,
                                   w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
                                   tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
                                   v_seq[x], ctr)
                else:
                    if v_stopped[x]:
                        # a queue member stays put until served; the queue is
                        # the stopped chain anchored at the stop line.  A
                        # stopped vehicle whose anchor is gone (predecessor
                        # moved on) restarts instead.
                        if pred >= 0:
                            anchored = v_stopped[pred]
                        else:
                            anchored = v_pos[x] >= L - 1e-6
                        if anchored:
                            _attribute(m, 0.0, True, cv, k,
                                       w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv,
                                       w_dist_cv, tr_step, ev_step, ev_veh, ev_mov,
                                       ev_e, ev_stop, ev_cv, v_seq[x], ctr)
                            step_delay += dt
                            pred = x
                            x = nxt
                            continue
                        v_stopped[x] = False
                        m_ns[m] -= 1
                        ctr[C_NSTOP] -= 1
                        if cv:
                            m_ns_cv[m] -= 1
                    cap = L
                    if pred >= 0:
                        pcap = v_pos[pred] - jam
                        if pcap < cap:
                            cap = pcap
                    adv = advmax
                    room = cap - v_pos[x]
                    if room < adv:
                        adv = room
                    if adv < halt_dist:
                        adv = 0.0
                    v_pos[x] += adv
                    stop = adv == 0.0
                    if stop:
                        m_ns[m] += 1
                        ctr[C_NSTOP] += 1
                        if cv:
                            m_ns_cv[m] += 1
                        v_everstop[x] = True
                    v_stopped[x] = stop
                    _attribute(m, adv, stop, cv, k,
                               w_cnt, w_stop, w_dist, w_cnt_cv, w_stop_cv, w_dist_cv,
                               tr_step, ev_step, ev_veh, ev_mov, ev_e, ev_stop, ev_cv,
                               v_seq[x], ctr)
                    step_delay += dt - adv / vf
                pred = x
                x = nxt

        # ------------------------------------------------ arrivals, admissions
        fctr[F_WAIT] += ctr[C_BLOCKED] * dt
        for eix in range(entry_links.shape[0]):
            link = entry_links[eix]
            rate = rates[k, 0] if entry_is_ns[eix] else rates[k, 1]
            u = uniform(seed, STREAM_ARRIVAL, link, k)
            nnew = poisson_count(rate * dt, u)
            for _ in range(nnew):
                if ctr[C_FSTOP] > 0:
                    ctr[C_FSTOP] -= 1
                    slot = fs[ctr[C_FSTOP]]
                elif ctr[C_HWM] < pool:
                    slot = ctr[C_HWM]
                    ctr[C_HWM] += 1
                else:
                    ctr[C_OVERFLOW] = 1
                    return k
                vid = ctr[C_CREATED]
                ctr[C_CREATED] += 1
                v_seq[slot] = vid
                v_mov[slot] = _draw_turn(seed, vid, 0, link,
                                         link_out_start, link_out_mov, mov_ratio)
                v_cv[slot] = uniform(seed, STREAM_TAG, vid, 0) < p
                v_pos[slot] = 0.0
                v_lane[slot] = -1
                v_next[slot] = -1
                v_stopped[slot] = False
                v_everstop[slot] = False
                v_hops[slot] = 0
                v_tnet[slot] = 0.0
                v_tcreated[slot] = t + dt
                v_fft[slot] = 0.0
                v_laststep[slot] = -1
                tl = bq_tail[link]
                if tl < 0:
                    bq_head[link] = slot
                else:
                    v_next[tl] = slot
                bq_tail[link] = slot
                bq_n[link] += 1
                ctr[C_BLOCKED] += 1
            while True:
                h = bq_head[link]
                if h < 0 or link_n[link] >= link_cap[link]:
                    break
                nl = mov_lane[v_mov[h]]
                tl = lane_tail[nl]
                if tl >= 0 and v_pos[tl] < jam:
                    break
                bq_head[link] = v_next[h]
                if bq_head[link] < 0:
                    bq_tail[link] = -1
                v_next[h] = -1
                bq_n[link] -= 1
                ctr[C_BLOCKED] -= 1
                v_lane[h] = nl
                v_tnet[h] = t + dt
                v_laststep[h] = k
                if tl < 0:
                    lane_head[nl] = h
                else:
                    v_next[tl] = h
                lane_tail[nl] = h
                link_n[link] += 1
                m_n[v_mov[h]] += 1
                if v_cv[h]:
                    m_n_cv[v_mov[h]] += 1
                ctr[C_LIVE] += 1
                ctr[C_ENTERED] += 1

        # ------------------------------------------------ ledger
        if ctr[C_CREATED] != ctr[C_LIVE] + ctr[C_EXITED] + ctr[C_BLOCKED]:
            ctr[C_VIOL] += 1
        fctr[F_DELAY] += step_delay
        fctr[F_STOP_SUM] += ctr[C_NSTOP]
        fctr[F_LIVE_SUM] += ctr[C_LIVE]
        led_delay[minute] += step_delay
        led_vehsum[minute] += ctr[C_LIVE]
        led_blocksum[minute] += ctr[C_BLOCKED]
        led_steps[minute] += 1
        led_entered[minute] = ctr[C_ENTERED]
        led_exited[minute] = ctr[C_EXITED]
        led_wait[minute] = fctr[F_WAIT]
        s_created[k] = ctr[C_CREATED]
        s_live[k] = ctr[C_LIVE]
        s_exited[k] = ctr[C_EXITED]
        s_blocked[k] = ctr[C_BLOCKED]

    return k1
