use serde::{Deserialize, Serialize};

/// Static credentials for the single organization a control plane serves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub org_key: String,
    pub api_key: String,
    pub user_id: String,
}

impl Credentials {
    pub fn new(
        org_key: impl Into<String>,
        api_key: impl Into<String>,
        user_id: impl Into<String>,
    ) -> Self {
        Credentials {
            org_key: org_key.into(),
            api_key: api_key.into(),
            user_id: user_id.into(),
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.org_key.is_empty() && !self.api_key.is_empty() && !self.user_id.is_empty()
    }

    pub fn org_key_matches(&self, presented: &str) -> bool {
        !self.org_key.is_empty() && constant_time_eq(self.org_key.as_bytes(), presented.as_bytes())
    }

    /// `api_key` and `user_id` both match. Evaluates both comparisons.
    pub fn admin_matches(&self, api_key: &str, user_id: &str) -> bool {
        let k = constant_time_eq(self.api_key.as_bytes(), api_key.as_bytes());
        let u = constant_time_eq(self.user_id.as_bytes(), user_id.as_bytes());
        !self.api_key.is_empty() && k & u
    }

    pub fn all_match(&self, presented: &Credentials) -> bool {
        let org = self.org_key_matches(&presented.org_key);
        let admin = self.admin_matches(&presented.api_key, &presented.user_id);
        org & admin
    }
}

/// Comparison whose running time depends only on the lengths of the inputs.
pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    let mut diff = a.len() ^ b.len();
    let n = a.len().max(b.len());
    for i in 0..n {
        let x = a.get(i).copied().unwrap_or(0);
        let y = b.get(i).copied().unwrap_or(0);
        diff |= usize::from(x ^ y);
    }
    diff == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ct_eq_basics() {
        assert!(constant_time_eq(b"abc", b"abc"));
        assert!(!constant_time_eq(b"abc", b"abd"));
        assert!(!constant_time_eq(b"abc", b"abcd"));
        assert!(!constant_time_eq(b"", b"a"));
        assert!(constant_time_eq(b"", b""));
        // lengths differing by a multiple of 256 must still differ
        assert!(!constant_time_eq(&[0u8; 256], &[]));
    }

    #[test]
    fn empty_configured_keys_never_match() {
        let c = Credentials::new("", "", "");
        assert!(!c.org_key_matches(""));
        assert!(!c.admin_matches("", ""));
    }

    #[test]
    fn admin_requires_both() {
        let c = Credentials::new("org", "key", "user");
        assert!(c.admin_matches("key", "user"));
        assert!(!c.admin_matches("key", "other"));
        assert!(!c.admin_matches("nope", "user"));
    }
}
