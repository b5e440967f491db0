"""The three games wrapped for the training loop.

Every task knows how to build its networks, roll out a pool of episodes with
shaped rewards, produce belief training pairs, and evaluate. Rollouts are
vectorised over episodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .belief import BeliefDataset, belief_net
from .bridge_env import BatchAuction, max_episode_steps
from .comm import BestBeliefTracker, comm_reward, pretrain_loss
from .core import DeckSpec, full_recall_slots, history_slot_width
from .data import DealSet
from .guide import (GUIDE_OBS_DIM, LISTENER_BASE_DIM, N_ACTIONS, N_LANDMARKS, PUBLIC_DIM,
                    GuideConfig, guide_observations, guide_public, guide_reset, guide_step,
                    listener_distance, scripted_guide)
from .matrix import MatrixGameSpec
from .neural import MLP, Adam, backward, forward
from .ppo import DecisionBatch, discounted_returns, log_probs, sample_actions

CENTRALIZED = "centralized"
DISTRIBUTED = "distributed"


@dataclass
class Agents:
    policies: dict[str, MLP]
    values: dict[str, MLP]
    beliefs: dict[str, Optional[MLP]] = field(default_factory=dict)
    mode: str = CENTRALIZED
    zero_belief: bool = False

    def has_beliefs(self) -> bool:
        return bool(self.beliefs) and all(b is not None for b in self.beliefs.values())


@dataclass
class Rollout:
    batches: dict[str, DecisionBatch]
    mean_env: float
    mean_comm: float
    extra: dict = field(default_factory=dict)


def _choose(probs: np.ndarray, rng: np.random.Generator, greedy: bool) -> np.ndarray:
    return probs.argmax(axis=1) if greedy else sample_actions(probs, rng)


def _mlp(sizes, head, rng):
    # policies start close to uniform
    return MLP(sizes, head, rng=rng, out_scale=0.01 if head == "softmax" else 1.0)


# bridge

class BridgeTask:
    """Non-competitive bidding on deals drawn from a scored training set.

    The policy sees ``own hand + belief about partner`` (same card space);
    the belief net sees only the public history.
    """

    kind = "bernoulli"
    name = "bridge"
    beliefs_every_iteration = True
    uses_pretraining = True

    def __init__(self, deck: DeckSpec, train: DealSet, test: DealSet,
                 history_slots: Optional[int] = None, recall: Optional[int] = None,
                 hidden: tuple[int, ...] = (256, 256), belief_hidden: tuple[int, ...] = (256, 256),
                 eval_episodes: Optional[int] = None):
        if not train.scored or not test.scored:
            raise ValueError("bridge training needs scored deal sets")
        self.deck = deck
        self.train, self.test = train, test
        self.slots = full_recall_slots(deck) if history_slots is None else history_slots
        self.recall = recall
        self.hidden = hidden
        self.belief_hidden = belief_hidden
        self.eval_episodes = eval_episodes
        self.train_x = train.encoded()
        self.test_x = test.encoded()
        self.train_rdp = train.r_dp
        self.test_rdp = test.r_dp

    @property
    def n_actions(self) -> int:
        return self.deck.n_bids

    @property
    def belief_dim(self) -> int:
        return self.slots * history_slot_width(self.deck)

    def init_agents(self, rng: np.random.Generator, mode: str = CENTRALIZED,
                    zero_belief: bool = False) -> Agents:
        nc = self.deck.n_cards
        policy = _mlp([nc, *self.hidden, self.n_actions], "softmax", rng)
        value = _mlp([nc + self.n_actions, *self.hidden, 1], "linear", rng)
        seats = ["shared"] if mode == CENTRALIZED else ["N", "S"]
        return Agents({"bid": policy}, {"bid": value}, {s: None for s in seats}, mode, zero_belief)

    def new_belief(self, rng: np.random.Generator) -> MLP:
        return belief_net(self.belief_dim, self.deck.n_cards, self.kind, self.belief_hidden, rng)

    def belief_names(self, agents: Agents) -> list[str]:
        return list(agents.beliefs)

    def _belief(self, agents: Agents, north: np.ndarray, hist: np.ndarray) -> np.ndarray:
        """Belief of each row's seat (its own model) about its partner."""
        if agents.mode == CENTRALIZED:
            return agents.beliefs["shared"](hist)
        out = np.empty((len(hist), self.deck.n_cards))
        for seat, sel in (("N", north), ("S", ~north)):
            if sel.any():
                out[sel] = agents.beliefs[seat](hist[sel])
        return out

    def _comm_belief(self, agents: Agents, actor_north: np.ndarray, hist_partner: np.ndarray):
        """Belief about the actor's hand after its bid, as used for the communication reward.

        Centralized training queries the partner's model (parameters are
        shared); distributed training uses the actor's own model on the
        partner's view of the history.
        """
        return self._belief(agents, actor_north, hist_partner)

    def play(self, agents: Agents, deals: DealSet, x: tuple[np.ndarray, np.ndarray], r_dp: np.ndarray,
             rng: np.random.Generator, greedy: bool = False, alpha: float = 0.0,
             gamma: float = 1.0, collect_pairs: bool = False, record: bool = False) -> dict:
        deck = self.deck
        E = len(deals)
        hn, hs = x
        auction = BatchAuction(deck, hn, hs)
        T = max_episode_steps(deck)
        with_belief = agents.has_beliefs()
        use_input = with_belief and not agents.zero_belief
        trackers = {}
        if with_belief:
            empty = np.zeros((1, self.belief_dim))
            for seat, own in (("N", hn), ("S", hs)):
                b0 = self._comm_belief(agents, np.array([seat == "N"]), empty)
                trackers[seat] = BestBeliefTracker.start(own, np.repeat(b0, E, axis=0))
        steps = []
        pairs_x, pairs_t = [], []
        trace_beliefs = [] if record else None
        rc_mat = np.zeros((E, T))
        for t in range(T):
            rows = np.flatnonzero(~auction.done)
            if len(rows) == 0:
                break
            north = auction.north_to_act()[rows]
            own = np.where(north[:, None], hn[rows], hs[rows])
            if collect_pairs or (with_belief and (use_input or record)):
                hist = auction.history(north, self.slots, rows, self.recall)
            if collect_pairs:
                hist_other = auction.history(~north, self.slots, rows, self.recall)
                partner_of_actor = np.where(north[:, None], hs[rows], hn[rows])
                pairs_x += [hist.astype(np.uint8), hist_other.astype(np.uint8)]
                pairs_t += [partner_of_actor.astype(np.uint8), own.astype(np.uint8)]
            if use_input:
                b = self._belief(agents, north, hist)
                eta = own + b
            else:
                b = np.zeros_like(own)
                eta = own
            if record and with_belief:
                # both seats' beliefs before this bid
                h_other = auction.history(~north, self.slots, rows, self.recall)
                b_other = self._belief(agents, ~north, h_other)
                trace_beliefs.append((rows, north, self._belief(agents, north, hist), b_other))
            mask = auction.legal_mask()[rows]
            probs = agents.policies["bid"](eta, mask)
            a = _choose(probs, rng, greedy)
            auction.step(rows, a)
            rc = np.zeros(len(rows))
            if with_belief:
                hp = auction.history(~north, self.slots, rows, self.recall)
                bn = self._comm_belief(agents, north, hp)
                for seat, sel in (("N", north), ("S", ~north)):
                    if sel.any():
                        rc[sel] = comm_reward(own[sel], trackers[seat], bn[sel], rows=rows[sel])
            rc_mat[rows, t] = rc
            steps.append((rows, t, eta, mask, a, log_probs(probs, a), north))
        cols = auction.contract_columns()
        e_idx = np.arange(E)
        r_e = np.where(cols < 0, r_dp, deals.scores[e_idx, np.maximum(cols, 0)])
        out = {"r_e": r_e, "auction": auction, "rc": rc_mat, "steps": steps}
        if collect_pairs:
            out["pairs"] = (np.concatenate(pairs_x), np.concatenate(pairs_t))
        if record:
            out["beliefs"] = trace_beliefs
        if greedy and not collect_pairs:
            return out
        # per-agent returns: parity 0 = North's steps, 1 = South's
        lengths = auction.lengths
        t_idx = np.arange(T)[None, :]
        terminal = t_idx == (lengths[:, None] - 1)
        G = []
        for parity in (0, 1):
            R = np.where(t_idx % 2 == parity, alpha * rc_mat, 0.0) + np.where(terminal, r_e[:, None], 0.0)
            G.append(discounted_returns(R, gamma))
        obs, masks, acts, logps, rets, eps = [], [], [], [], [], []
        for rows, t, eta, mask, a, lp, north in steps:
            obs.append(eta)
            masks.append(mask)
            acts.append(a)
            logps.append(lp)
            rets.append(G[t % 2][rows, t])
            eps.append(rows)
        obs = np.concatenate(obs)
        masks = np.concatenate(masks)
        out["batch"] = DecisionBatch(obs, np.concatenate(acts), np.concatenate(logps),
                                     np.concatenate(rets), np.concatenate(eps), masks,
                                     np.concatenate([obs, masks], axis=1))
        return out

    def rollout(self, agents: Agents, n_episodes: int, rng: np.random.Generator,
                alpha: float, gamma: float = 1.0) -> Rollout:
        idx = rng.integers(0, len(self.train), size=n_episodes)
        x = (self.train_x[0][idx], self.train_x[1][idx])
        res = self.play(agents, self.train.subset(idx), x, self.train_rdp[idx], rng, alpha=alpha, gamma=gamma)
        steps_taken = res["auction"].lengths.sum()
        return Rollout({"bid": res["batch"]}, float(res["r_e"].mean()),
                       float(res["rc"].sum() / max(steps_taken, 1)))

    def belief_data(self, agents: Agents, n_episodes: int, rng: np.random.Generator) -> BeliefDataset:
        if n_episodes == 0:
            return BeliefDataset.empty(self.belief_dim, self.deck.n_cards)
        idx = rng.integers(0, len(self.train), size=n_episodes)
        x = (self.train_x[0][idx], self.train_x[1][idx])
        res = self.play(agents, self.train.subset(idx), x, self.train_rdp[idx], rng, collect_pairs=True)
        hx, ht = res["pairs"]
        return BeliefDataset(hx, ht, self.kind)

    def evaluate(self, agents: Agents, rng: np.random.Generator, record: bool = False) -> dict:
        n = len(self.test) if self.eval_episodes is None else min(self.eval_episodes, len(self.test))
        idx = np.arange(n)
        x = (self.test_x[0][idx], self.test_x[1][idx])
        res = self.play(agents, self.test.subset(idx), x, self.test_rdp[idx], rng, greedy=True, record=record)
        out = {"mean_env_score": float(res["r_e"].mean()), "scores": res["r_e"]}
        if record:
            out["play"] = res
        return out

    def pretrain(self, agents: Agents, steps: int, tau: float, lr: float, batch: int,
                 rng: np.random.Generator) -> list[float]:
        """Fit the opening policy to the tempered score row of each deal (PASS scored as r_dp)."""
        if steps <= 0:
            return []
        policy = agents.policies["bid"]
        opt = Adam(policy, lr=lr)
        hands = np.concatenate(self.train_x)
        targets = np.concatenate([np.c_[self.train_rdp, self.train.scores]] * 2)
        losses = []
        for _ in range(steps):
            idx = rng.integers(0, len(hands), size=batch)
            out, cache = forward(policy, hands[idx])
            loss, g = pretrain_loss(cache.logits, targets[idx], tau)
            losses.append(loss)
            opt.step(backward(policy, cache, g, wrt_logits=True))
        return losses


# matrix game

class MatrixTask:
    """One signal from Player 1, one reply from Player 2, shared payoff."""

    kind = "categorical"
    name = "matrix"
    beliefs_every_iteration = True
    uses_pretraining = False

    def __init__(self, spec: MatrixGameSpec, hidden: tuple[int, ...] = (32, 32),
                 belief_hidden: tuple[int, ...] = (32,)):
        self.spec = spec
        self.hidden = hidden
        self.belief_hidden = belief_hidden
        n, k1, k2 = spec.n_cards, spec.n_a1, spec.n_a2
        self.p2_dim = n + k1 + n

    @property
    def belief_dim(self) -> int:
        return self.spec.n_a1

    def init_agents(self, rng: np.random.Generator, mode: str = CENTRALIZED,
                    zero_belief: bool = False) -> Agents:
        s = self.spec
        p1 = _mlp([s.n_cards, *self.hidden, s.n_a1], "softmax", rng)
        p2 = _mlp([self.p2_dim, *self.hidden, s.n_a2], "softmax", rng)
        v1 = _mlp([s.n_cards, *self.hidden, 1], "linear", rng)
        v2 = _mlp([self.p2_dim, *self.hidden, 1], "linear", rng)
        beliefs = {"p2": None} if mode == CENTRALIZED else {"p2": None, "p1": None}
        return Agents({"p1": p1, "p2": p2}, {"p1": v1, "p2": v2}, beliefs, mode, zero_belief)

    def new_belief(self, rng: np.random.Generator) -> MLP:
        return belief_net(self.belief_dim, self.spec.n_cards, self.kind, self.belief_hidden, rng)

    def _comm_model(self, agents: Agents) -> MLP:
        return agents.beliefs["p2"] if agents.mode == CENTRALIZED else agents.beliefs["p1"]

    def _episode(self, agents: Agents, c1, c2, rng, greedy=False, alpha=0.0):
        s = self.spec
        E = len(c1)
        eye_c, eye_a = np.eye(s.n_cards), np.eye(s.n_a1)
        x1 = eye_c[c1]
        pr1 = agents.policies["p1"](x1)
        a1 = _choose(pr1, rng, greedy)
        h = eye_a[a1]
        rc = np.zeros(E)
        b = np.zeros((E, s.n_cards))
        if agents.has_beliefs():
            cm = self._comm_model(agents)
            tracker = BestBeliefTracker.start(x1, np.repeat(cm(np.zeros((1, s.n_a1))), E, axis=0), self.kind)
            rc = comm_reward(x1, tracker, cm(h), self.kind)
            if not agents.zero_belief:
                b = agents.beliefs["p2"](h)
        obs2 = np.concatenate([eye_c[c2], h, b], axis=1)
        pr2 = agents.policies["p2"](obs2)
        a2 = _choose(pr2, rng, greedy)
        payoff = s.payoff[c1, c2, a1, a2]
        return x1, pr1, a1, obs2, pr2, a2, payoff, rc

    def rollout(self, agents: Agents, n_episodes: int, rng: np.random.Generator,
                alpha: float, gamma: float = 1.0) -> Rollout:
        n = self.spec.n_cards
        c1 = rng.integers(0, n, n_episodes)
        c2 = rng.integers(0, n, n_episodes)
        x1, pr1, a1, obs2, pr2, a2, payoff, rc = self._episode(agents, c1, c2, rng, alpha=alpha)
        ep = np.arange(n_episodes)
        # Player 1 acts at t=0, the payoff arrives one step later
        b1 = DecisionBatch(x1, a1, log_probs(pr1, a1), alpha * rc + gamma * payoff, ep)
        b2 = DecisionBatch(obs2, a2, log_probs(pr2, a2), payoff.astype(np.float64), ep)
        return Rollout({"p1": b1, "p2": b2}, float(payoff.mean()), float(rc.mean()))

    def belief_data(self, agents: Agents, n_episodes: int, rng: np.random.Generator) -> BeliefDataset:
        s = self.spec
        if n_episodes == 0:
            return BeliefDataset.empty(self.belief_dim, s.n_cards, self.kind)
        c1 = rng.integers(0, s.n_cards, n_episodes)
        a1 = _choose(agents.policies["p1"](np.eye(s.n_cards)[c1]), rng, False)
        h = np.concatenate([np.zeros((n_episodes, s.n_a1)), np.eye(s.n_a1)[a1]])
        t = np.concatenate([np.eye(s.n_cards)[c1]] * 2)
        return BeliefDataset(h.astype(np.uint8), t.astype(np.uint8), self.kind)

    def evaluate(self, agents: Agents, rng: np.random.Generator, record: bool = False) -> dict:
        """Exact expected payoff of the greedy joint policy."""
        n = self.spec.n_cards
        c1, c2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        payoff = self._episode(agents, c1.ravel(), c2.ravel(), rng, greedy=True)[6]
        return {"mean_env_score": float(payoff.mean())}


# silent guide

class GuideTask:
    """Guide and Listener; beliefs come from a scripted Guide and are fitted once."""

    kind = "categorical"
    name = "guide"
    beliefs_every_iteration = False
    uses_pretraining = False

    def __init__(self, config: GuideConfig = GuideConfig(), frames: int = 3,
                 hidden: tuple[int, ...] = (64, 64), belief_hidden: tuple[int, ...] = (64, 64),
                 eval_episodes: int = 256, script_noise: float = 0.3):
        self.config = config
        self.frames = frames
        self.hidden = hidden
        self.belief_hidden = belief_hidden
        self.eval_episodes = eval_episodes
        self.script_noise = script_noise

    @property
    def belief_dim(self) -> int:
        return self.frames * PUBLIC_DIM

    def init_agents(self, rng: np.random.Generator, mode: str = DISTRIBUTED,
                    zero_belief: bool = False) -> Agents:
        g = _mlp([GUIDE_OBS_DIM, *self.hidden, N_ACTIONS], "softmax", rng)
        l_ = _mlp([LISTENER_BASE_DIM + N_LANDMARKS, *self.hidden, N_ACTIONS], "softmax", rng)
        vg = _mlp([GUIDE_OBS_DIM + 1, *self.hidden, 1], "linear", rng)
        vl = _mlp([LISTENER_BASE_DIM + N_LANDMARKS + 1, *self.hidden, 1], "linear", rng)
        beliefs = {"guide": None, "listener": None} if mode == DISTRIBUTED else {"shared": None}
        return Agents({"guide": g, "listener": l_}, {"guide": vg, "listener": vl}, beliefs, mode, zero_belief)

    def new_belief(self, rng: np.random.Generator) -> MLP:
        return belief_net(self.belief_dim, N_LANDMARKS, self.kind, self.belief_hidden, rng)

    def _model(self, agents: Agents, who: str) -> MLP:
        return agents.beliefs["shared"] if agents.mode == CENTRALIZED else agents.beliefs[who]

    def _window(self, frames: list[np.ndarray]) -> np.ndarray:
        pad = [np.zeros_like(frames[0])] * max(0, self.frames - len(frames))
        return np.concatenate(pad + frames[-self.frames:], axis=1)

    def play(self, agents: Agents, n: int, rng: np.random.Generator, alpha: float = 0.0,
             gamma: float = 0.95, scripted: bool = False, keep_states: bool = False) -> dict:
        cfg = self.config
        state = guide_reset(n, rng, cfg)
        H = cfg.horizon
        frames = [guide_public(state)]
        with_belief = agents is not None and agents.has_beliefs()
        goal = np.eye(N_LANDMARKS)[state.goal]
        tracker = None
        if with_belief and not scripted:
            tracker = BestBeliefTracker.start(goal, self._model(agents, "guide")(self._window(frames)), self.kind)
        rec = {k: [] for k in ("og", "ol", "ag", "al", "lpg", "lpl")}
        env_r = np.zeros((n, H))
        rc = np.zeros((n, H))
        pairs_x, pairs_t = [], []
        states = [state] if keep_states else None
        for t in range(H):
            og, ol_base = guide_observations(state)
            window = self._window(frames)
            if scripted:
                pairs_x.append(window)
                pairs_t.append(goal)
                ag = scripted_guide(state, rng, self.script_noise)
                al = np.zeros(n, dtype=np.int64)
            else:
                if with_belief and not agents.zero_belief:
                    bl = self._model(agents, "listener")(window)
                else:
                    bl = np.zeros((n, N_LANDMARKS))
                ol = np.concatenate([ol_base, bl], axis=1)
                pg = agents.policies["guide"](og)
                pl = agents.policies["listener"](ol)
                ag, al = sample_actions(pg, rng), sample_actions(pl, rng)
                tf = np.full((n, 1), t / H)
                rec["og"].append(np.concatenate([og, tf], axis=1))
                rec["ol"].append(np.concatenate([ol, tf], axis=1))
                rec["ag"].append(ag)
                rec["al"].append(al)
                rec["lpg"].append(log_probs(pg, ag))
                rec["lpl"].append(log_probs(pl, al))
            state, r = guide_step(state, ag, al)
            frames.append(guide_public(state))
            env_r[:, t] = r
            if tracker is not None:
                rc[:, t] = comm_reward(goal, tracker, self._model(agents, "guide")(self._window(frames)), self.kind)
            if keep_states:
                states.append(state)
        out = {"env": env_r, "rc": rc, "final_distance": listener_distance(state), "states": states}
        if scripted:
            out["pairs"] = (np.concatenate(pairs_x), np.concatenate(pairs_t))
            return out
        Gg = discounted_returns(env_r + alpha * rc, gamma)
        Gl = discounted_returns(env_r, gamma)
        ep = np.tile(np.arange(n), H)
        og = np.concatenate(rec["og"])
        ol = np.concatenate(rec["ol"])
        out["batches"] = {
            "guide": DecisionBatch(og[:, :-1], np.concatenate(rec["ag"]), np.concatenate(rec["lpg"]),
                                   Gg.T.reshape(-1), ep, None, og),
            "listener": DecisionBatch(ol[:, :-1], np.concatenate(rec["al"]), np.concatenate(rec["lpl"]),
                                      Gl.T.reshape(-1), ep, None, ol),
        }
        return out

    def rollout(self, agents: Agents, n_episodes: int, rng: np.random.Generator,
                alpha: float, gamma: float = 0.95) -> Rollout:
        res = self.play(agents, n_episodes, rng, alpha, gamma)
        return Rollout(res["batches"], float(res["env"].sum(axis=1).mean()), float(res["rc"].mean()),
                       {"final_distance": float(res["final_distance"].mean())})

    def belief_data(self, agents: Agents, n_episodes: int, rng: np.random.Generator) -> BeliefDataset:
        if n_episodes == 0:
            return BeliefDataset(np.zeros((0, self.belief_dim), np.float32),
                                 np.zeros((0, N_LANDMARKS), np.uint8), self.kind)
        res = self.play(None, n_episodes, rng, scripted=True)
        hx, ht = res["pairs"]
        return BeliefDataset(hx.astype(np.float32), ht.astype(np.uint8), self.kind)

    def evaluate(self, agents: Agents, rng: np.random.Generator, record: bool = False) -> dict:
        res = self.play(agents, self.eval_episodes, rng, keep_states=record)
        out = {"mean_env_score": float(res["env"].sum(axis=1).mean()),
               "final_distance": float(res["final_distance"].mean())}
        if record:
            out["states"] = res["states"]
            out["rewards"] = list(res["env"].T)
        return out
