//! Controller fault codes and their event-log domains.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u32", from = "u32")]
pub enum ErrorCode {
    EmergencyStop,
    SpeedViolation,
    ProximityToSingularity,
    JointOutOfRange,
    JointLoadTooHigh,
    Unknown,
}

impl ErrorCode {
    pub const KNOWN: [ErrorCode; 5] = [
        ErrorCode::EmergencyStop,
        ErrorCode::SpeedViolation,
        ErrorCode::ProximityToSingularity,
        ErrorCode::JointOutOfRange,
        ErrorCode::JointLoadTooHigh,
    ];

    pub fn code(self) -> u32 {
        match self {
            ErrorCode::EmergencyStop => 90518,
            ErrorCode::SpeedViolation => 90515,
            ErrorCode::ProximityToSingularity => 50456,
            ErrorCode::JointOutOfRange => 50027,
            ErrorCode::JointLoadTooHigh => 50055,
            ErrorCode::Unknown => 0,
        }
    }

    /// Parses one of the five known codes. `0` and anything else is `None`.
    pub fn from_known(code: u32) -> Option<Self> {
        Self::KNOWN.into_iter().find(|c| c.code() == code)
    }

    pub fn title(self) -> &'static str {
        match self {
            ErrorCode::EmergencyStop => "Emergency Stop",
            ErrorCode::SpeedViolation => "Speed Violation",
            ErrorCode::ProximityToSingularity => "Proximity to Singularity",
            ErrorCode::JointOutOfRange => "Joint Out of Range",
            ErrorCode::JointLoadTooHigh => "Joint Load Too High",
            ErrorCode::Unknown => "Unknown",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ErrorCode::EmergencyStop => "Emergency stop activated; motors are off until the controller is restarted.",
            ErrorCode::SpeedViolation => "Commanded TCP velocity stayed far above the configured speed deviation limit.",
            ErrorCode::ProximityToSingularity => "The requested motion passes through or too close to a kinematic singularity.",
            ErrorCode::JointOutOfRange => "The requested pose requires a joint position outside its working range.",
            ErrorCode::JointLoadTooHigh => "Measured joint load exceeded the permitted level.",
            ErrorCode::Unknown => "Unclassified controller error.",
        }
    }

    /// Event-log domain: motion errors (5xxxx) in domain 5, system errors (9xxxx) in 9.
    pub fn domain(self) -> u8 {
        match self.code() / 10000 {
            9 => 9,
            _ => 5,
        }
    }
}

impl From<ErrorCode> for u32 {
    fn from(c: ErrorCode) -> u32 {
        c.code()
    }
}

impl From<u32> for ErrorCode {
    fn from(v: u32) -> Self {
        Self::from_known(v).unwrap_or(ErrorCode::Unknown)
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.title(), self.code())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_titles_domains() {
        let table = [
            (90518, "Emergency Stop", 9),
            (90515, "Speed Violation", 9),
            (50456, "Proximity to Singularity", 5),
            (50027, "Joint Out of Range", 5),
            (50055, "Joint Load Too High", 5),
        ];
        for (code, title, domain) in table {
            let c = ErrorCode::from_known(code).unwrap();
            assert_eq!((c.code(), c.title(), c.domain()), (code, title, domain));
        }
        assert_eq!(ErrorCode::from_known(12345), None);
        assert_eq!(ErrorCode::from_known(0), None);
        assert_eq!(ErrorCode::from(12345), ErrorCode::Unknown);
        assert_eq!(ErrorCode::EmergencyStop.to_string(), "Emergency Stop (90518)");
    }
}
