//! Protocol hash, vote commitments and identity-provider signatures.

use std::fmt;

use ed25519_dalek::{Signature, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::chain::AccountId;
use crate::trust::Vote;

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)?;
                Ok($name(out))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(Hash32, 32);
hex_bytes!(Blinding, 32);
hex_bytes!(IdentitySignature, 64);
hex_bytes!(PublicKey, 32);

pub fn sha256(data: &[u8]) -> Hash32 {
    Hash32(Sha256::digest(data).into())
}

/// Identifier of a design file: the SHA-256 of its bytes.
pub fn design_hash(design: &[u8]) -> Hash32 {
    sha256(design)
}

/// One-byte vote encoding: `vote + 1`.
pub fn encode_vote(vote: Vote) -> u8 {
    (vote.value() + 1) as u8
}

/// `SHA-256(vote_byte || blinding)`.
pub fn commitment_digest(vote: Vote, blinding: &Blinding) -> Hash32 {
    let mut h = Sha256::new();
    h.update([encode_vote(vote)]);
    h.update(blinding.0);
    Hash32(h.finalize().into())
}

/// A vote commitment together with the opening the player keeps private.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment {
    pub digest: Hash32,
    pub vote: Vote,
    pub blinding: Blinding,
}

impl Commitment {
    pub fn new(vote: Vote, blinding: Blinding) -> Self {
        Self { digest: commitment_digest(vote, &blinding), vote, blinding }
    }

    pub fn opens(digest: &Hash32, vote: Vote, blinding: &Blinding) -> bool {
        commitment_digest(vote, blinding) == *digest
    }
}

impl PublicKey {
    pub fn of(key: &SigningKey) -> Self {
        PublicKey(key.verifying_key().to_bytes())
    }
}

/// Ed25519 signature of `signer` over the raw account-id bytes.
pub fn sign_identity(signer: &SigningKey, account: &AccountId) -> IdentitySignature {
    use ed25519_dalek::Signer;
    IdentitySignature(signer.sign(account.as_str().as_bytes()).to_bytes())
}

pub fn verify_identity(ip_key: &PublicKey, account: &AccountId, sig: &IdentitySignature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&ip_key.0) else {
        return false;
    };
    key.verify(account.as_str().as_bytes(), &Signature::from_bytes(&sig.0)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_encoding_is_offset_by_one() {
        assert_eq!(encode_vote(Vote::Invalid), 0);
        assert_eq!(encode_vote(Vote::Abstain), 1);
        assert_eq!(encode_vote(Vote::Valid), 2);
    }

    #[test]
    fn commitment_matches_manual_preimage() {
        let blinding = Blinding([0xab; 32]);
        let mut preimage = vec![2u8];
        preimage.extend_from_slice(&[0xab; 32]);
        assert_eq!(commitment_digest(Vote::Valid, &blinding), sha256(&preimage));
    }

    #[test]
    fn flipped_blinding_bit_fails_to_open() {
        let c = Commitment::new(Vote::Invalid, Blinding([7; 32]));
        assert!(Commitment::opens(&c.digest, Vote::Invalid, &c.blinding));
        let mut bad = c.blinding;
        bad.0[31] ^= 1;
        assert!(!Commitment::opens(&c.digest, Vote::Invalid, &bad));
        assert!(!Commitment::opens(&c.digest, Vote::Valid, &c.blinding));
    }

    #[test]
    fn identity_signatures() {
        let ip = SigningKey::from_bytes(&[1; 32]);
        let other = SigningKey::from_bytes(&[2; 32]);
        let alice = AccountId::from("alice");
        let sig = sign_identity(&ip, &alice);
        assert!(verify_identity(&PublicKey::of(&ip), &alice, &sig));
        assert!(!verify_identity(&PublicKey::of(&ip), &AccountId::from("bob"), &sig));
        assert!(!verify_identity(&PublicKey::of(&ip), &alice, &sign_identity(&other, &alice)));
    }

    #[test]
    fn hex_round_trip() {
        let h = sha256(b"design");
        assert_eq!(h.to_hex().len(), 64);
        assert_eq!(Hash32::from_hex(&h.to_hex()).unwrap(), h);
        assert!(Hash32::from_hex("abcd").is_err());
    }
}
