use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Surgical gesture ("surgeme") label, written `G<k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Gesture(pub u16);

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.0)
    }
}

impl FromStr for Gesture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('G')
            .and_then(|n| n.parse::<u16>().ok())
            .filter(|&n| n > 0)
            .map(Gesture)
            .ok_or_else(|| Error::Config(format!("unknown gesture token `{s}`")))
    }
}

/// Self-reported surgeon experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Skill {
    Beginner,
    Intermediate,
    Expert,
}

impl Skill {
    pub const ALL: [Skill; 3] = [Skill::Beginner, Skill::Intermediate, Skill::Expert];

    /// Dataset meta-file letter: `N` (novice), `I`, `E`.
    pub fn letter(self) -> char {
        match self {
            Skill::Beginner => 'N',
            Skill::Intermediate => 'I',
            Skill::Expert => 'E',
        }
    }

    pub fn from_letter(c: &str) -> Option<Skill> {
        match c {
            "N" => Some(Skill::Beginner),
            "I" => Some(Skill::Intermediate),
            "E" => Some(Skill::Expert),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Skill::Beginner => "Beginner",
            Skill::Intermediate => "Intermediate",
            Skill::Expert => "Expert",
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Skill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(skill) = Skill::from_letter(s) {
            return Ok(skill);
        }
        match s.to_ascii_lowercase().as_str() {
            "beginner" | "novice" => Ok(Skill::Beginner),
            "intermediate" => Ok(Skill::Intermediate),
            "expert" => Ok(Skill::Expert),
            _ => Err(Error::Config(format!("unknown skill `{s}`"))),
        }
    }
}

/// Surgical task: the three JIGSAWS tasks or one of the synthetic ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    KnotTying,
    NeedlePassing,
    Suturing,
    SynthA,
    SynthB,
    SynthC,
}

impl Task {
    pub const SYNTHETIC: [Task; 3] = [Task::SynthA, Task::SynthB, Task::SynthC];

    /// Identifier used in paths and configs (JIGSAWS directory names).
    pub fn name(self) -> &'static str {
        match self {
            Task::KnotTying => "Knot_Tying",
            Task::NeedlePassing => "Needle_Passing",
            Task::Suturing => "Suturing",
            Task::SynthA => "synthA",
            Task::SynthB => "synthB",
            Task::SynthC => "synthC",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Task::KnotTying => "Knot-Tying",
            Task::NeedlePassing => "Needle-Passing",
            other => other.name(),
        }
    }

    pub fn is_synthetic(self) -> bool {
        Task::SYNTHETIC.contains(&self)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "knottying" => Ok(Task::KnotTying),
            "needlepassing" => Ok(Task::NeedlePassing),
            "suturing" => Ok(Task::Suturing),
            "syntha" => Ok(Task::SynthA),
            "synthb" => Ok(Task::SynthB),
            "synthc" => Ok(Task::SynthC),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

impl From<Gesture> for u32 {
    fn from(g: Gesture) -> u32 {
        g.0 as u32
    }
}

/// Beginner 0, Intermediate 1, Expert 2.
impl From<Skill> for u32 {
    fn from(s: Skill) -> u32 {
        s as u32
    }
}

macro_rules! serde_via_str {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_str!(Gesture);
serde_via_str!(Skill);
serde_via_str!(Task);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skill_letters() {
        assert_eq!(Skill::from_letter("E"), Some(Skill::Expert));
        assert_eq!(Skill::from_letter("N"), Some(Skill::Beginner));
        assert_eq!(Skill::from_letter("I"), Some(Skill::Intermediate));
        assert_eq!(Skill::from_letter("X"), None);
    }

    #[test]
    fn gesture_tokens() {
        assert_eq!("G2".parse::<Gesture>().unwrap(), Gesture(2));
        assert_eq!(Gesture(11).to_string(), "G11");
        for bad in ["G", "2", "G0", "Gx", "g3"] {
            assert!(bad.parse::<Gesture>().is_err(), "{bad}");
        }
    }

    #[test]
    fn task_names_parse_loosely() {
        assert_eq!("Knot_Tying".parse::<Task>().unwrap(), Task::KnotTying);
        assert_eq!("knot-tying".parse::<Task>().unwrap(), Task::KnotTying);
        assert_eq!("synthA".parse::<Task>().unwrap(), Task::SynthA);
        assert!(matches!("synthZ".parse::<Task>(), Err(Error::Config(_))));
        assert_eq!(Task::NeedlePassing.display_name(), "Needle-Passing");
    }

    #[test]
    fn serde_as_strings() {
        let json = serde_json::to_string(&(Task::Suturing, Skill::Expert, Gesture(3))).unwrap();
        assert_eq!(json, r#"["Suturing","Expert","G3"]"#);
        let back: (Task, Skill, Gesture) = serde_json::from_str(&json).unwrap();
        assert_eq!(back, (Task::Suturing, Skill::Expert, Gesture(3)));
    }
}
