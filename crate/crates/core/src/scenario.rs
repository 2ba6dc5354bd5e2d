//! Randomized multi-day meal and insulin schedules.
//!
//! Therapy follows functional insulin treatment: a constant basal infusion
//! plus one bolus per meal, computed from the carb ratio. Realism knobs match
//! clinical messiness: meal times, sizes and durations jitter around the
//! nominal plan, boluses are computed from a misperceived meal size and
//! delivered with a delay after the meal starts.
//!
//! All draws come from one seeded portable generator, so a scenario is a pure
//! function of its config.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compartmental::ModelInput;
use crate::error::{Error, Result};
use crate::rng::{seeded, PRNG_NAME};

pub const MINUTES_PER_DAY: usize = 1440;

/// A planned meal, minute-of-day resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    pub start_min: u32,
    pub size_g: f64,
    pub duration_min: u32,
}

impl MealEvent {
    fn validate(&self) -> Result<()> {
        if self.size_g <= 0.0 || self.duration_min == 0 {
            return Err(Error::InvalidConfig(format!(
                "meal must have positive size and duration, got {self:?}"
            )));
        }
        if self.start_min + self.duration_min > MINUTES_PER_DAY as u32 {
            return Err(Error::InvalidConfig(format!(
                "meal must end within its day, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub days: usize,
    pub nominal_meals: Vec<MealEvent>,
    pub time_jitter_min: u32,
    /// Fraction of nominal size, e.g. 0.2 for +/-20%.
    pub size_jitter_frac: f64,
    pub duration_jitter_min: u32,
    pub carb_ratio_g_per_u: f64,
    /// Fraction of perceived meal size, e.g. 0.3 for +/-30%.
    pub bolus_error_frac: f64,
    /// Inclusive [min, max] delay of the bolus after meal start [min].
    pub bolus_delay_min: [u32; 2],
    pub basal_rate_u_per_min: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::InvalidConfig("days must be >= 1".into()));
        }
        for meal in &self.nominal_meals {
            meal.validate()?;
        }
        if !(self.size_jitter_frac >= 0.0 && self.size_jitter_frac < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "size jitter must lie in [0, 1), got {}",
                self.size_jitter_frac
            )));
        }
        if !(self.bolus_error_frac >= 0.0 && self.bolus_error_frac < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "bolus error must lie in [0, 1), got {}",
                self.bolus_error_frac
            )));
        }
        if self.carb_ratio_g_per_u <= 0.0 {
            return Err(Error::InvalidConfig("carb ratio must be positive".into()));
        }
        if self.bolus_delay_min[0] > self.bolus_delay_min[1] {
            return Err(Error::InvalidConfig(format!(
                "bolus delay range reversed: {:?}",
                self.bolus_delay_min
            )));
        }
        if self.basal_rate_u_per_min < 0.0 {
            return Err(Error::InvalidConfig("basal rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// A realized meal together with the draws that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedMeal {
    pub day: usize,
    pub nominal: MealEvent,
    /// Absolute scenario minute.
    pub start_min: usize,
    pub size_g: f64,
    pub duration_min: u32,
    pub time_offset_min: i32,
    pub size_mult: f64,
    pub duration_offset_min: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedBolus {
    pub meal_index: usize,
    /// Absolute scenario minute of delivery.
    pub time_min: usize,
    pub amount_u: f64,
    pub delay_min: u32,
    pub perceived_size_g: f64,
    pub error_mult: f64,
}

/// Minute-resolution input sequence plus the realized event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub inputs: Vec<ModelInput>,
    pub meal_log: Vec<RealizedMeal>,
    pub bolus_log: Vec<RealizedBolus>,
    /// Generator recorded for provenance.
    pub prng: String,
    pub seed: u64,
}

impl Scenario {
    pub fn len_min(&self) -> usize {
        self.inputs.len()
    }
}

const MAX_REDRAWS: usize = 100;

/// Generates the realized schedule. Deterministic in the config, including
/// its seed. Days whose jittered meals overlap are redrawn; after
/// [`MAX_REDRAWS`] failed attempts the schedule is declared unsatisfiable.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let total = config.days * MINUTES_PER_DAY;
    let mut rng = seeded(config.seed);

    let mut inputs = vec![
        ModelInput {
            u: config.basal_rate_u_per_min,
            r: 0.0,
        };
        total
    ];
    let mut meal_log = Vec::with_capacity(config.days * config.nominal_meals.len());
    let mut bolus_log = Vec::with_capacity(meal_log.capacity());

    for day in 0..config.days {
        let meals = draw_day(&mut rng, config, day)?;
        for meal in meals {
            let per_min = meal.size_g / meal.duration_min as f64;
            for k in 0..meal.duration_min as usize {
                inputs[meal.start_min + k].r += per_min;
            }

            let delay = rng.random_range(config.bolus_delay_min[0]..=config.bolus_delay_min[1]);
            let error_mult = jitter_mult(&mut rng, config.bolus_error_frac);
            let perceived = meal.size_g * error_mult;
            let amount = perceived / config.carb_ratio_g_per_u;
            let time = (meal.start_min + delay as usize).min(total - 1);
            inputs[time].u += amount;

            bolus_log.push(RealizedBolus {
                meal_index: meal_log.len(),
                time_min: time,
                amount_u: amount,
                delay_min: delay,
                perceived_size_g: perceived,
                error_mult,
            });
            meal_log.push(meal);
        }
    }

    Ok(Scenario {
        inputs,
        meal_log,
        bolus_log,
        prng: PRNG_NAME.to_string(),
        seed: config.seed,
    })
}

fn jitter_mult(rng: &mut crate::rng::PortableRng, frac: f64) -> f64 {
    if frac == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - frac..=1.0 + frac)
    }
}

fn jitter_int(rng: &mut crate::rng::PortableRng, bound: u32) -> i32 {
    if bound == 0 {
        0
    } else {
        rng.random_range(-(bound as i32)..=bound as i32)
    }
}

/// Draws all meals of one day, redrawing the whole day on overlap or
/// day-boundary violation.
fn draw_day(
    rng: &mut crate::rng::PortableRng,
    config: &ScenarioConfig,
    day: usize,
) -> Result<Vec<RealizedMeal>> {
    'attempt: for _ in 0..MAX_REDRAWS {
        let mut meals = Vec::with_capacity(config.nominal_meals.len());
        for &nominal in &config.nominal_meals {
            let time_offset = jitter_int(rng, config.time_jitter_min);
            let size_mult = jitter_mult(rng, config.size_jitter_frac);
            let duration_offset = jitter_int(rng, config.duration_jitter_min);

            let start = nominal.start_min as i64 + time_offset as i64;
            let duration = nominal.duration_min as i64 + duration_offset as i64;
            if start < 0 || duration < 1 || start + duration > MINUTES_PER_DAY as i64 {
                continue 'attempt;
            }
            meals.push(RealizedMeal {
                day,
                nominal,
                start_min: day * MINUTES_PER_DAY + start as usize,
                size_g: nominal.size_g * size_mult,
                duration_min: duration as u32,
                time_offset_min: time_offset,
                size_mult,
                duration_offset_min: duration_offset,
            });
        }
        for i in 0..meals.len() {
            for j in i + 1..meals.len() {
                let (a, b) = (&meals[i], &meals[j]);
                let a_end = a.start_min + a.duration_min as usize;
                let b_end = b.start_min + b.duration_min as usize;
                if a.start_min < b_end && b.start_min < a_end {
                    continue 'attempt;
                }
            }
        }
        return Ok(meals);
    }
    Err(Error::UnsatisfiableSchedule(format!(
        "day {day}: meals still overlap after {MAX_REDRAWS} redraws"
    )))
}

/// The three-meal daily template: 60 g at 07:00 and 12:00, 80 g at 18:00,
/// lasting 30, 30 and 40 minutes.
pub fn standard_meal_template() -> Vec<MealEvent> {
    vec![
        MealEvent { start_min: 7 * 60, size_g: 60.0, duration_min: 30 },
        MealEvent { start_min: 12 * 60, size_g: 60.0, duration_min: 30 },
        MealEvent { start_min: 18 * 60, size_g: 80.0, duration_min: 40 },
    ]
}

/// Default train / validation / test protocols: the same three-meal template
/// with time +/-20 min, size +/-20%, duration +/-10 min jitter, a bolus delay
/// of 5-30 min and +/-30% bolus misestimation; 14 / 14 / 7 days with distinct
/// seeds.
pub fn nominal_protocols() -> (ScenarioConfig, ScenarioConfig, ScenarioConfig) {
    let base = ScenarioConfig {
        days: 14,
        nominal_meals: standard_meal_template(),
        time_jitter_min: 20,
        size_jitter_frac: 0.2,
        duration_jitter_min: 10,
        carb_ratio_g_per_u: 8.75,
        bolus_error_frac: 0.3,
        bolus_delay_min: [5, 30],
        basal_rate_u_per_min: 0.02,
        seed: 101,
    };
    let train = base.clone();
    let validation = ScenarioConfig { seed: 202, ..base.clone() };
    let test = ScenarioConfig { days: 7, seed: 303, ..base };
    (train, validation, test)
}
