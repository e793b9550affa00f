use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::validation("cosine of a zero or non-finite vector"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Scales `v` to unit length.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::validation("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine between paired image and caption embeddings.
pub fn clip_score(image_embedding: &[f64], caption_embedding: &[f64]) -> Result<f64> {
    cosine(image_embedding, caption_embedding)
}

/// Dataset CLIPScore: mean pairwise cosine.
pub fn mean_clip_score<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (img, cap) in pairs {
        sum += clip_score(img, cap)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("no embedding pairs"));
    }
    Ok(sum / n as f64)
}
