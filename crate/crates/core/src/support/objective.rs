use crate::error::{Error, Result};
use crate::nn::CategoricalDist;

/// Teacher probabilities below this are raised to it inside supports.
pub const TEACHER_FLOOR: f64 = 1e-12;

/// Full-vocabulary reverse KL `sum_v pi(v) ln(pi(v) / q(v))` at one prefix.
pub fn full_local_rkl(student: &CategoricalDist, teacher: &CategoricalDist) -> Result<f64> {
    if student.vocab_size() != teacher.vocab_size() {
        return Err(Error::Dimension { expected: student.vocab_size(), got: teacher.vocab_size() });
    }
    let mut total = 0.0;
    for (v, (&p, &q)) in student.probs().iter().zip(teacher.probs()).enumerate() {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Err(Error::Divergence(format!("teacher gives token {v} zero mass")));
        }
        total += p * (p.ln() - q.ln());
    }
    Ok(total)
}

/// Gradient of [`full_local_rkl`] with respect to the student's logits.
pub fn full_local_rkl_logit_grad(student: &CategoricalDist, teacher: &CategoricalDist) -> Result<Vec<f64>> {
    let kl = full_local_rkl(student, teacher)?;
    Ok(student
        .probs()
        .iter()
        .zip(teacher.probs())
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p.ln() - q.ln() - kl) })
        .collect())
}

/// One-sample estimate `ln pi(y) - ln q(y)` of the local reverse KL.
pub fn sampled_token_loss(student: &CategoricalDist, teacher: &CategoricalDist, token: u32) -> Result<f64> {
    student.check_token(token)?;
    teacher.check_token(token)?;
    let (p, q) = (student.prob(token), teacher.prob(token));
    if p == 0.0 || q == 0.0 {
        return Err(Error::Divergence(format!("token {token} has zero mass (student {p}, teacher {q})")));
    }
    Ok(p.ln() - q.ln())
}
