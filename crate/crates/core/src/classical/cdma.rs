//! Synchronous CDMA over Walsh-Hadamard spreading codes.
//!
//! The code length is the smallest power of two covering the user count;
//! rows of the Sylvester-Hadamard matrix are mutually orthogonal ±1 chips,
//! so normalized-correlation despreading recovers each user exactly at zero
//! noise and averages noise power down by the spreading factor.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CdmaError {
    #[error("need at least one user")]
    NoUsers,
    #[error("user index {user} outside the {code_len}-chip code set")]
    UserIndex { user: usize, code_len: usize },
}

#[derive(Debug, Clone)]
pub struct CdmaConfig {
    pub num_users: usize,
    /// Spreading factor C: next power of two >= num_users (minimum 2).
    pub code_len: usize,
    rows: Vec<Vec<f64>>,
}

fn hadamard(n: usize) -> Vec<Vec<f64>> {
    debug_assert!(n.is_power_of_two());
    let mut m = vec![vec![1.0]];
    while m.len() < n {
        let half = m.len();
        let mut next = vec![vec![0.0; 2 * half]; 2 * half];
        for r in 0..half {
            for c in 0..half {
                next[r][c] = m[r][c];
                next[r][c + half] = m[r][c];
                next[r + half][c] = m[r][c];
                next[r + half][c + half] = -m[r][c];
            }
        }
        m = next;
    }
    m
}

impl CdmaConfig {
    pub fn new(num_users: usize) -> Result<Self, CdmaError> {
        if num_users == 0 {
            return Err(CdmaError::NoUsers);
        }
        let code_len = num_users.next_power_of_two().max(2);
        Ok(CdmaConfig {
            num_users,
            code_len,
            rows: hadamard(code_len),
        })
    }

    pub fn code_row(&self, user: usize) -> Result<&[f64], CdmaError> {
        if user >= self.code_len {
            return Err(CdmaError::UserIndex {
                user,
                code_len: self.code_len,
            });
        }
        Ok(&self.rows[user])
    }

    /// Spreads each complex symbol into C chips using user `user`'s row.
    pub fn spread(&self, symbols: &[(f64, f64)], user: usize) -> Result<Vec<(f64, f64)>, CdmaError> {
        let row = self.code_row(user)?;
        let mut chips = Vec::with_capacity(symbols.len() * self.code_len);
        for &(re, im) in symbols {
            for &c in row {
                chips.push((re * c, im * c));
            }
        }
        Ok(chips)
    }

    /// Normalized-correlation despreading of a synchronous chip stream.
    pub fn despread(&self, chips: &[(f64, f64)], user: usize) -> Result<Vec<(f64, f64)>, CdmaError> {
        let row = self.code_row(user)?;
        assert!(
            chips.len().is_multiple_of(self.code_len),
            "chip stream must be a whole number of symbols"
        );
        let inv = 1.0 / self.code_len as f64;
        Ok(chips
            .chunks(self.code_len)
            .map(|group| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (&(cr, ci), &code) in group.iter().zip(row) {
                    re += cr * code;
                    im += ci * code;
                }
                (re * inv, im * inv)
            })
            .collect())
    }
}

/// Chip-wise sum of all users' spread streams (synchronous multiple access).
/// Streams must have equal length; pad symbol streams beforehand.
pub fn superpose(streams: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    assert!(!streams.is_empty());
    let len = streams[0].len();
    assert!(
        streams.iter().all(|s| s.len() == len),
        "all users must transmit the same chip count"
    );
    let mut out = vec![(0.0, 0.0); len];
    for stream in streams {
        for (acc, &(re, im)) in out.iter_mut().zip(stream) {
            acc.0 += re;
            acc.1 += im;
        }
    }
    out
}
