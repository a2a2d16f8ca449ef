//! Additive homomorphic Paillier cryptosystem with fixed-point gradient
//! encoding.
//!
//! The scheme uses the standard `g = n + 1` generator, so encryption is
//! `c = (1 + m*n) * r^n mod n^2` and decryption `m = L(c^lambda mod n^2) * mu
//! mod n`. Keys generated in-process retain the prime factors and take CRT
//! shortcuts for both encryption and decryption; keys loaded from the wire
//! format (which carries only `n, g, lambda, mu, bits`) fall back to the
//! direct formulas.
//!
//! Real-valued gradient statistics are rounded to a fixed scale of 1e-6
//! before encryption; negatives map to the upper half of the plaintext ring
//! and are recovered at the `n/2` boundary. Sums therefore stay exact in
//! integer micro-units as long as they remain below `n/2`.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Micro-units per gradient unit: gradients are rounded to a scale of 1e-6.
pub const GRADIENT_SCALE: i64 = 1_000_000;

pub const SUPPORTED_KEY_BITS: [usize; 3] = [512, 1024, 2048];

/// Signed fixed-point value in micro-units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixedPoint {
    pub raw: i64,
}

impl FixedPoint {
    /// Rounds half away from zero to the 1e-6 grid.
    pub fn encode(x: f64) -> Result<FixedPoint> {
        if !x.is_finite() {
            return Err(Error::Range(format!("cannot encode non-finite value {x}")));
        }
        let scaled = x * GRADIENT_SCALE as f64;
        if scaled.abs() >= i64::MAX as f64 {
            return Err(Error::Range(format!("{x} overflows the fixed-point range")));
        }
        Ok(FixedPoint { raw: scaled.round() as i64 })
    }

    pub fn decode(self) -> f64 {
        self.raw as f64 / GRADIENT_SCALE as f64
    }
}

/// Converts exact micro-units back to a real value.
pub fn micro_to_f64(raw: i128) -> f64 {
    raw as f64 / GRADIENT_SCALE as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    half_n: BigUint,
    bits: usize,
    key_id: String,
}

/// Prime factors and precomputed CRT constants, available only for keys
/// generated in this process.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CrtSecrets {
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    /// n mod p(p-1) and n mod q(q-1), the reduced encryption exponents
    n_mod_ord_p: BigUint,
    n_mod_ord_q: BigUint,
    /// (L_p(g^(p-1) mod p^2))^-1 mod p, and the q analogue
    h_p: BigUint,
    h_q: BigUint,
    /// p^-2 mod q^2 for ciphertext recombination
    pp_inv_qq: BigUint,
    /// p^-1 mod q for plaintext recombination
    p_inv_q: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    lambda: BigUint,
    mu: BigUint,
    public: PaillierPublicKey,
    crt: Option<CrtSecrets>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierKeyPair {
    pub public: PaillierPublicKey,
    pub private: PaillierPrivateKey,
    pub bits: usize,
}

/// Paillier ciphertext bound to the public key that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub value: BigUint,
    pub key_id: String,
}

impl Serialize for Ciphertext {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Ciphertext", 2)?;
        st.serialize_field("value", &self.value.to_str_radix(10))?;
        st.serialize_field("key_id", &self.key_id)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Ciphertext {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            value: String,
            key_id: String,
        }
        let w = Wire::deserialize(d)?;
        let value = BigUint::parse_bytes(w.value.as_bytes(), 10)
            .ok_or_else(|| serde::de::Error::custom("invalid decimal ciphertext"))?;
        Ok(Ciphertext { value, key_id: w.key_id })
    }
}

/// Wire form of a keypair: decimal big-integer text fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyDocument {
    pub n: String,
    pub g: String,
    pub lambda: String,
    pub mu: String,
    pub bits: usize,
}

fn key_id_of(n: &BigUint) -> String {
    let digest = Sha256::digest(n.to_bytes_be());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl PaillierPublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    fn check_key(&self, c: &Ciphertext) -> Result<()> {
        if c.key_id != self.key_id {
            return Err(Error::Key(format!(
                "ciphertext under key {} used with key {}",
                c.key_id, self.key_id
            )));
        }
        Ok(())
    }

    /// Randomized encryption of `0 <= m < n`.
    pub fn encrypt<R: RngCore>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(Error::Argument("plaintext must be below the modulus".into()));
        }
        let r = self.sample_unit(rng);
        let g_m = (BigUint::one() + m * &self.n) % &self.n_squared;
        let value = g_m * r.modpow(&self.n, &self.n_squared) % &self.n_squared;
        Ok(Ciphertext { value, key_id: self.key_id.clone() })
    }

    fn sample_unit<R: RngCore>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// Homomorphic addition: `Dec(add(Enc(a), Enc(b))) = (a + b) mod n`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
        self.check_key(c1)?;
        self.check_key(c2)?;
        Ok(Ciphertext {
            value: &c1.value * &c2.value % &self.n_squared,
            key_id: self.key_id.clone(),
        })
    }

    /// Adds a plaintext constant: `Dec(add_plain(Enc(a), m)) = (a + m) mod n`.
    pub fn add_plain(&self, c: &Ciphertext, m: &BigUint) -> Result<Ciphertext> {
        self.check_key(c)?;
        if m >= &self.n {
            return Err(Error::Argument("plaintext must be below the modulus".into()));
        }
        let g_m = (BigUint::one() + m * &self.n) % &self.n_squared;
        Ok(Ciphertext { value: &c.value * g_m % &self.n_squared, key_id: self.key_id.clone() })
    }

    /// Maps a real to the plaintext ring: negatives land in the upper half.
    pub fn encode_signed(&self, x: f64) -> Result<BigUint> {
        self.encode_micro(i128::from(FixedPoint::encode(x)?.raw))
    }

    /// Encodes exact micro-units.
    pub fn encode_micro(&self, raw: i128) -> Result<BigUint> {
        let magnitude = BigUint::from(raw.unsigned_abs());
        if magnitude >= self.half_n {
            return Err(Error::Range(format!("{raw} micro-units exceed the n/2 overflow guard")));
        }
        if raw >= 0 {
            Ok(magnitude)
        } else {
            Ok(&self.n - magnitude)
        }
    }

    /// Inverts [`encode_signed`] using the `n/2` sign boundary.
    pub fn decode_signed(&self, m: &BigUint) -> Result<f64> {
        Ok(micro_to_f64(self.decode_micro(m)?))
    }

    /// Decodes to exact micro-units.
    pub fn decode_micro(&self, m: &BigUint) -> Result<i128> {
        if m >= &self.n {
            return Err(Error::Range("encoded value not below the modulus".into()));
        }
        let (sign, magnitude) = if m > &self.half_n { (-1, &self.n - m) } else { (1, m.clone()) };
        let words = magnitude.to_u64_digits();
        if words.len() > 2 {
            return Err(Error::Range("aggregate exceeds the decodable integer range".into()));
        }
        let mut v: i128 = 0;
        for (i, w) in words.iter().enumerate() {
            v += (*w as i128) << (64 * i);
        }
        if v < 0 {
            return Err(Error::Range("aggregate exceeds the decodable integer range".into()));
        }
        Ok(sign * v)
    }

    pub fn to_document(&self) -> KeyDocument {
        KeyDocument {
            n: self.n.to_str_radix(10),
            g: (&self.n + BigUint::one()).to_str_radix(10),
            lambda: String::new(),
            mu: String::new(),
            bits: self.bits,
        }
    }
}

impl PaillierPrivateKey {
    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint> {
        self.public.check_key(c)?;
        match &self.crt {
            Some(crt) => {
                let m_p = Self::half_decrypt(&c.value, &crt.p, &crt.p_squared, &crt.h_p);
                let m_q = Self::half_decrypt(&c.value, &crt.q, &crt.q_squared, &crt.h_q);
                // Garner recombination mod n
                let diff = if m_q >= m_p { &m_q - &m_p } else { &crt.q - (&m_p - &m_q) % &crt.q };
                let t = diff * &crt.p_inv_q % &crt.q;
                Ok(m_p + t * &crt.p)
            }
            None => {
                let x = c.value.modpow(&self.lambda, &self.public.n_squared);
                let l = (x - BigUint::one()) / &self.public.n;
                Ok(l * &self.mu % &self.public.n)
            }
        }
    }

    /// `L_p(c^(p-1) mod p^2) * h_p mod p`
    fn half_decrypt(c: &BigUint, p: &BigUint, p_squared: &BigUint, h_p: &BigUint) -> BigUint {
        let x = (c % p_squared).modpow(&(p - BigUint::one()), p_squared);
        let l = (x - BigUint::one()) / p;
        l % p * h_p % p
    }

    /// CRT-accelerated encryption, available to holders of the private key.
    pub fn encrypt<R: RngCore>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        let crt = match &self.crt {
            Some(crt) => crt,
            None => return self.public.encrypt(m, rng),
        };
        if m >= &self.public.n {
            return Err(Error::Argument("plaintext must be below the modulus".into()));
        }
        let r = self.public.sample_unit(rng);
        let n = &self.public.n;
        let c_p = (BigUint::one() + m * n) % &crt.p_squared
            * (r.clone() % &crt.p_squared).modpow(&crt.n_mod_ord_p, &crt.p_squared)
            % &crt.p_squared;
        let c_q = (BigUint::one() + m * n) % &crt.q_squared
            * (r % &crt.q_squared).modpow(&crt.n_mod_ord_q, &crt.q_squared)
            % &crt.q_squared;
        // recombine mod n^2
        let diff = if c_q >= c_p {
            &c_q - &c_p
        } else {
            &crt.q_squared - (&c_p - &c_q) % &crt.q_squared
        };
        let t = diff * &crt.pp_inv_qq % &crt.q_squared;
        let value = (c_p + t * &crt.p_squared) % &self.public.n_squared;
        Ok(Ciphertext { value, key_id: self.public.key_id.clone() })
    }

    pub fn to_document(&self) -> KeyDocument {
        KeyDocument {
            n: self.public.n.to_str_radix(10),
            g: (&self.public.n + BigUint::one()).to_str_radix(10),
            lambda: self.lambda.to_str_radix(10),
            mu: self.mu.to_str_radix(10),
            bits: self.public.bits,
        }
    }

    pub fn from_document(doc: &KeyDocument) -> Result<PaillierPrivateKey> {
        let parse = |s: &str, field: &str| {
            BigUint::parse_bytes(s.as_bytes(), 10)
                .ok_or_else(|| Error::Key(format!("invalid decimal integer in field {field}")))
        };
        let n = parse(&doc.n, "n")?;
        let g = parse(&doc.g, "g")?;
        if g != &n + BigUint::one() {
            return Err(Error::Key("only g = n + 1 keys are supported".into()));
        }
        let lambda = parse(&doc.lambda, "lambda")?;
        let mu = parse(&doc.mu, "mu")?;
        let public = public_from_n(n, doc.bits);
        Ok(PaillierPrivateKey { lambda, mu, public, crt: None })
    }
}

fn public_from_n(n: BigUint, bits: usize) -> PaillierPublicKey {
    let key_id = key_id_of(&n);
    PaillierPublicKey {
        n_squared: &n * &n,
        half_n: &n / 2u32,
        bits,
        key_id,
        n,
    }
}

impl PaillierKeyPair {
    pub fn to_document(&self) -> KeyDocument {
        self.private.to_document()
    }

    pub fn from_document(doc: &KeyDocument) -> Result<PaillierKeyPair> {
        let private = PaillierPrivateKey::from_document(doc)?;
        Ok(PaillierKeyPair { public: private.public.clone(), bits: doc.bits, private })
    }
}

const SMALL_PRIMES: [u32; 46] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211,
];

fn miller_rabin<R: RngCore>(candidate: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let one = BigUint::one();
    let two = BigUint::from(2u32);
    let n_minus_one = candidate - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, candidate);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, candidate);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with the top two bits set, so products of two such primes
/// have exactly `2 * bits` bits. 40 Miller-Rabin rounds keep the error
/// probability below 2^-80.
fn gen_prime<R: RngCore>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut c = rng.gen_biguint(bits);
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if SMALL_PRIMES.iter().any(|&p| (&c % p).is_zero()) {
            continue;
        }
        if miller_rabin(&c, 40, rng) {
            return c;
        }
    }
}

/// Generates a Paillier keypair. 512-bit keys are reserved for tests; 2048 is
/// the production default.
pub fn keygen<R: RngCore>(bits: usize, rng: &mut R) -> Result<PaillierKeyPair> {
    if !SUPPORTED_KEY_BITS.contains(&bits) {
        return Err(Error::Argument(format!(
            "unsupported key size {bits}, expected one of {SUPPORTED_KEY_BITS:?}"
        )));
    }
    let half = (bits / 2) as u64;
    let p = gen_prime(half, rng);
    let q = loop {
        let q = gen_prime(half, rng);
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    let public = public_from_n(n.clone(), bits);

    let one = BigUint::one();
    let p_minus = &p - &one;
    let q_minus = &q - &one;
    let lambda = &p_minus * &q_minus / p_minus.gcd(&q_minus);
    let mu = (&lambda % &n)
        .modinv(&n)
        .ok_or_else(|| Error::Key("lambda is not invertible modulo n".into()))?;

    let p_squared = &p * &p;
    let q_squared = &q * &q;
    let h = |prime: &BigUint, prime_sq: &BigUint| -> Result<BigUint> {
        // L_prime(g^(prime-1) mod prime^2)^-1 mod prime, g = n + 1
        let g_pow = (&n + &one).modpow(&(prime - &one), prime_sq);
        let l = (g_pow - &one) / prime;
        (l % prime)
            .modinv(prime)
            .ok_or_else(|| Error::Key("CRT decryption constant is not invertible".into()))
    };
    let crt = CrtSecrets {
        n_mod_ord_p: &n % (&p * &p_minus),
        n_mod_ord_q: &n % (&q * &q_minus),
        h_p: h(&p, &p_squared)?,
        h_q: h(&q, &q_squared)?,
        pp_inv_qq: p_squared
            .modinv(&q_squared)
            .ok_or_else(|| Error::Key("p^2 is not invertible modulo q^2".into()))?,
        p_inv_q: p.modinv(&q).ok_or_else(|| Error::Key("p is not invertible modulo q".into()))?,
        p,
        q,
        p_squared,
        q_squared,
    };

    let private = PaillierPrivateKey { lambda, mu, public: public.clone(), crt: Some(crt) };
    Ok(PaillierKeyPair { public, private, bits })
}
