//! Shortest-path expert: walks to the nearest pose facing an uncovered
//! colored tile and places a block there.

use std::collections::VecDeque;

use rand_chacha::rand_core::RngCore;

use crate::gridworld::{field_bit, Action, AgentPose, Heading, WorldState};
use crate::rng;

const MOVES: [Action; 5] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::StrafeRight, Action::StrafeLeft];

fn heading_index(h: Heading) -> usize {
    match h {
        Heading::North => 0,
        Heading::East => 1,
        Heading::South => 2,
        Heading::West => 3,
    }
}

fn pose_key(p: &AgentPose) -> usize {
    ((p.row * 9 + p.col) as usize) * 4 + heading_index(p.heading)
}

fn facing_target(state: &WorldState) -> bool {
    let (r, c) = state.pose.ahead();
    field_bit(r, c).is_some_and(|b| state.task.colored & !state.covered & b != 0)
}

/// First action of a shortest plan to the next correct placement, or `None`
/// when no uncovered colored tile can be faced.
pub fn expert_action(state: &WorldState) -> Option<Action> {
    if facing_target(state) {
        return Some(Action::PlaceBlock);
    }
    let mut first: Vec<Option<Action>> = vec![None; 9 * 9 * 4];
    let mut seen = vec![false; 9 * 9 * 4];
    let mut queue = VecDeque::new();
    seen[pose_key(&state.pose)] = true;
    queue.push_back(*state);
    while let Some(s) = queue.pop_front() {
        let from = first[pose_key(&s.pose)];
        for a in MOVES {
            // Moves never fail or terminate in a way that matters here, so
            // ignore the action budget while searching.
            let mut probe = s;
            probe.terminal = false;
            probe.actions_taken = 0;
            let next = probe.apply(a).expect("non-terminal move").state;
            let key = pose_key(&next.pose);
            if seen[key] {
                continue;
            }
            seen[key] = true;
            first[key] = Some(from.unwrap_or(a));
            if facing_target(&next) {
                return first[key];
            }
            queue.push_back(next);
        }
    }
    None
}

/// Expert with probability `1 - epsilon`, uniform otherwise.
pub fn noisy_expert_action(state: &WorldState, epsilon: f64, rng: &mut impl RngCore) -> Action {
    let random = rng::bernoulli(rng, epsilon);
    let pick = Action::ALL[rng::below(rng, Action::ALL.len())];
    if random {
        return pick;
    }
    expert_action(state).unwrap_or(pick)
}
