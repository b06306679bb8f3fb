//! Rod identities: two teams times four roles, eight rods total.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Black,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Goal,
    Defense,
    Midfield,
    Striker,
}

impl Team {
    pub fn as_str(self) -> &'static str {
        match self {
            Team::Black => "black",
            Team::White => "white",
        }
    }
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Goal => "goal",
            Role::Defense => "defense",
            Role::Midfield => "midfield",
            Role::Striker => "striker",
        }
    }
}

/// Identity of one rod. The canonical order (black goal → striker, then white
/// goal → striker) is used everywhere a fixed rod order matters: state arrays,
/// CSV columns, wire messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RodId {
    pub team: Team,
    pub role: Role,
}

impl RodId {
    pub const fn new(team: Team, role: Role) -> Self {
        RodId { team, role }
    }

    /// All eight rods in canonical order.
    pub const ALL: [RodId; 8] = [
        RodId::new(Team::Black, Role::Goal),
        RodId::new(Team::Black, Role::Defense),
        RodId::new(Team::Black, Role::Midfield),
        RodId::new(Team::Black, Role::Striker),
        RodId::new(Team::White, Role::Goal),
        RodId::new(Team::White, Role::Defense),
        RodId::new(Team::White, Role::Midfield),
        RodId::new(Team::White, Role::Striker),
    ];

    /// Position of this rod in the canonical order, 0..8.
    pub fn index(self) -> usize {
        let t = match self.team {
            Team::Black => 0,
            Team::White => 4,
        };
        let r = match self.role {
            Role::Goal => 0,
            Role::Defense => 1,
            Role::Midfield => 2,
            Role::Striker => 3,
        };
        t + r
    }

    /// Stable snake_case label, e.g. `black_goal`; used in CSV headers,
    /// model files and CLI flags.
    pub fn label(self) -> String {
        format!("{}_{}", self.team.as_str(), self.role.as_str())
    }
}

impl fmt::Display for RodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.team.as_str(), self.role.as_str())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("unknown rod id `{0}`, expected e.g. `black_goal` or `white_striker`")]
pub struct ParseRodIdError(String);

impl FromStr for RodId {
    type Err = ParseRodIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        for id in RodId::ALL {
            if id.label() == norm {
                return Ok(id);
            }
        }
        Err(ParseRodIdError(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn exactly_eight_distinct_rods() {
        let set: HashSet<RodId> = RodId::ALL.iter().copied().collect();
        assert_eq!(set.len(), 8);
        for (i, id) in RodId::ALL.iter().enumerate() {
            assert_eq!(id.index(), i);
        }
    }

    #[test]
    fn labels_parse_back() {
        for id in RodId::ALL {
            assert_eq!(id.label().parse::<RodId>().unwrap(), id);
        }
        assert_eq!("white striker".parse::<RodId>().unwrap(), RodId::new(Team::White, Role::Striker));
        assert!("green_goal".parse::<RodId>().is_err());
    }
}
