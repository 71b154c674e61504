//! Utility-company tariff: the unit price `(L - g)^2 + p0` and daily bills.
//!
//! The quadratic term is a pure penalty with coefficient 1; cost units are
//! abstract.

use serde::{Deserialize, Serialize};

use crate::error::BillingError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffParams {
    /// Base price per kWh.
    pub p0: f64,
    /// Forecast utility generation per interval (kWh).
    pub generation: Vec<f64>,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn unit_price(aggregated: f64, generation: f64, p0: f64) -> f64 {
    let gap = aggregated - generation;
    gap * gap + p0
}

/// Cost of drawing `own` kWh in an interval where everyone else draws
/// `others` and the utility generates `generation`.
pub fn interval_cost(own: f64, others: f64, generation: f64, p0: f64) -> f64 {
    own * unit_price(own + others, generation, p0)
}

fn check_lengths(own: &[f64], others: &[f64], tariff: &TariffParams) -> Result<(), BillingError> {
    let expected = tariff.generation.len();
    if own.len() != expected {
        return Err(BillingError::LengthMismatch {
            what: "own loads",
            got: own.len(),
            expected,
        });
    }
    if others.len() != expected {
        return Err(BillingError::LengthMismatch {
            what: "other loads",
            got: others.len(),
            expected,
        });
    }
    Ok(())
}

/// Daily bill `sum_t l_m * p_t`.
pub fn daily_bill(own: &[f64], others: &[f64], tariff: &TariffParams) -> Result<f64, BillingError> {
    check_lengths(own, others, tariff)?;
    Ok(own
        .iter()
        .zip(others)
        .zip(&tariff.generation)
        .map(|((&l, &o), &g)| interval_cost(l, o, g, tariff.p0))
        .collect::<CompensatedSum>()
        .total())
}

/// The same bill split into the linear base term `l * p0` and the
/// quadratic tracking term `l * (l + l_others - g)^2`, each summed
/// separately.
pub fn daily_bill_decomposed(
    own: &[f64],
    others: &[f64],
    tariff: &TariffParams,
) -> Result<BillParts, BillingError> {
    check_lengths(own, others, tariff)?;
    let mut base = CompensatedSum::default();
    let mut tracking = CompensatedSum::default();
    for ((&l, &o), &g) in own.iter().zip(others).zip(&tariff.generation) {
        base.add(l * tariff.p0);
        let gap = l + o - g;
        tracking.add(l * gap * gap);
    }
    Ok(BillParts {
        base: base.total(),
        tracking: tracking.total(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BillParts {
    pub base: f64,
    pub tracking: f64,
}

impl BillParts {
    pub fn total(&self) -> f64 {
        self.base + self.tracking
    }
}

/// `sum_t (L_t - g_t)^2`, the load-tracking error of a community.
pub fn tracking_error(aggregated: &[f64], generation: &[f64]) -> f64 {
    aggregated
        .iter()
        .zip(generation)
        .map(|(&l, &g)| (l - g) * (l - g))
        .collect::<CompensatedSum>()
        .total()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tariff(g: &[f64], p0: f64) -> TariffParams {
        TariffParams {
            p0,
            generation: g.to_vec(),
        }
    }

    #[test]
    fn price_examples() {
        assert_eq!(unit_price(3.0, 3.0, 0.2), 0.2);
        assert_eq!(unit_price(4.0, 2.0, 1.0), 5.0);
        assert_eq!(unit_price(0.0, 2.0, 1.0), 5.0);
    }

    #[test]
    fn bill_examples() {
        let zero = daily_bill(&[0.0, 0.0], &[3.0, 1.0], &tariff(&[1.0, 1.0], 1.0)).unwrap();
        assert_eq!(zero, 0.0);
        let one = daily_bill(&[1.0], &[1.0], &tariff(&[2.0], 1.0)).unwrap();
        assert_eq!(one, 1.0);
        let two = daily_bill(&[1.0, 1.0], &[0.0, 0.0], &tariff(&[0.0, 2.0], 1.0)).unwrap();
        assert_eq!(two, 4.0);
    }

    #[test]
    fn length_mismatch() {
        let err = daily_bill(&[1.0], &[1.0, 2.0], &tariff(&[2.0, 2.0], 1.0)).unwrap_err();
        assert_eq!(
            err,
            BillingError::LengthMismatch {
                what: "own loads",
                got: 1,
                expected: 2
            }
        );
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let total: CompensatedSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(total.total(), 1.0);
    }

    #[test]
    fn tracking_error_is_sum_of_squares() {
        assert_eq!(tracking_error(&[1.0, 3.0], &[2.0, 1.0]), 5.0);
    }
}
