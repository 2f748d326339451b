use rand::Rng;

use crate::error::{Error, Result};
use crate::text::ToyGrammar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Walk,
    Wave,
    Jump,
    Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connective {
    None,
    While,
    Then,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Walk, Action::Wave, Action::Jump, Action::Turn];

    /// Waving and turning are done with a side; walking and jumping with a direction.
    pub fn is_sided(self) -> bool {
        matches!(self, Action::Wave | Action::Turn)
    }

    pub fn third_person(self) -> &'static str {
        match self {
            Action::Walk => "walks",
            Action::Wave => "waves",
            Action::Jump => "jumps",
            Action::Turn => "turns",
        }
    }

    pub fn gerund(self) -> &'static str {
        match self {
            Action::Walk => "walking",
            Action::Wave => "waving",
            Action::Jump => "jumping",
            Action::Turn => "turning",
        }
    }

    pub fn from_word(w: &str) -> Option<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.third_person() == w || a.gerund() == w)
    }
}

impl Direction {
    pub fn word(self) -> Option<&'static str> {
        match self {
            Direction::Forward => Some("forward"),
            Direction::Backward => Some("backward"),
            Direction::None => None,
        }
    }
}

impl Side {
    pub fn word(self) -> Option<&'static str> {
        match self {
            Side::Left => Some("left"),
            Side::Right => Some("right"),
            Side::None => None,
        }
    }
}

pub(crate) const COUNT_WORDS: [&str; 3] = ["two", "three", "four"];

/// The attributes a toy caption talks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToyMotionSpec {
    pub action: Action,
    pub direction: Direction,
    pub side: Side,
    /// Repetitions of the main action, 1 to 4.
    pub count: u8,
    pub connective: Connective,
    pub second_action: Option<Action>,
}

impl ToyMotionSpec {
    pub fn simple(action: Action) -> Self {
        Self {
            action,
            direction: Direction::None,
            side: if action.is_sided() { Side::Left } else { Side::None },
            count: 1,
            connective: Connective::None,
            second_action: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("{m} in {self:?}")));
        if self.action.is_sided() {
            if self.side == Side::None {
                return bad("sided action without a side");
            }
            if self.direction != Direction::None {
                return bad("sided action with a direction");
            }
        } else if self.side != Side::None {
            return bad("side on an unsided action");
        }
        if !(1..=4).contains(&self.count) {
            return bad("count outside 1..=4");
        }
        match (self.connective, self.second_action) {
            (Connective::None, None) => {}
            (Connective::None, Some(_)) => return bad("second action without a connective"),
            (_, None) => return bad("connective without a second action"),
            (_, Some(a)) if a == self.action => return bad("second action repeats the first"),
            _ => {}
        }
        Ok(())
    }

    /// Fixed-order byte encoding; 255 marks a missing second action.
    pub fn to_bytes(&self) -> [u8; 6] {
        [
            self.action as u8,
            self.direction as u8,
            self.side as u8,
            self.count,
            self.connective as u8,
            self.second_action.map_or(255, |a| a as u8),
        ]
    }

    pub fn from_bytes(b: [u8; 6]) -> Result<Self> {
        let action = |v: u8| Action::ALL.get(v as usize).copied();
        let bad = || Error::Contract(format!("invalid spec bytes {b:?}"));
        let spec = Self {
            action: action(b[0]).ok_or_else(bad)?,
            direction: [Direction::Forward, Direction::Backward, Direction::None]
                .get(b[1] as usize)
                .copied()
                .ok_or_else(bad)?,
            side: [Side::Left, Side::Right, Side::None]
                .get(b[2] as usize)
                .copied()
                .ok_or_else(bad)?,
            count: b[3],
            connective: [Connective::None, Connective::While, Connective::Then]
                .get(b[4] as usize)
                .copied()
                .ok_or_else(bad)?,
            second_action: match b[5] {
                255 => None,
                v => Some(action(v).ok_or_else(bad)?),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Draws a spec (action first, then its attributes, each uniformly) and
/// renders its caption.
pub fn sample_spec<R: Rng + ?Sized>(rng: &mut R, grammar: &ToyGrammar) -> (ToyMotionSpec, String) {
    let action = Action::ALL[rng.random_range(0..4)];
    let (direction, side) = if action.is_sided() {
        (Direction::None, [Side::Left, Side::Right][rng.random_range(0..2)])
    } else {
        let d = [Direction::Forward, Direction::Backward, Direction::None][rng.random_range(0..3)];
        (d, Side::None)
    };
    let count = rng.random_range(1..=4u8);
    let connective = [Connective::None, Connective::While, Connective::Then][rng.random_range(0..3)];
    let second_action = (connective != Connective::None).then(|| {
        let others: Vec<Action> = Action::ALL.into_iter().filter(|&a| a != action).collect();
        others[rng.random_range(0..others.len())]
    });
    let spec = ToyMotionSpec {
        action,
        direction,
        side,
        count,
        connective,
        second_action,
    };
    let caption = grammar.render(&spec).expect("sampled specs are always renderable");
    (spec, caption)
}
