use std::fmt;

use serde::{Deserialize, Serialize};

use super::codec::{Canonical, Encoder};
use super::hash::{hash_digest, Digest};
use super::keys::{KeyPair, PublicKey, SignatureBytes};
use crate::escrow::{EscrowDeploy, EscrowDeposit, EscrowMature, EscrowWithdrawal};
use crate::identity::{EnergySummary, Registration};
use crate::lifecycle::{
    Disposal, EolDeclaration, FailureDeclaration, PanelAgreement, Receipt, Refurbishment, Shipment,
};
use crate::offchain::{BalancePosting, FiatPaymentRecord};
use crate::rccoin::{BurnRecord, DonationRecord, MintRecord, PolicyUpdate, TradeRecord};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(ActorId);
string_id!(ChannelId);
string_id!(AgreementId);
string_id!(ContractId);

impl ChannelId {
    /// Readable by every registered actor.
    pub fn public() -> Self {
        ChannelId::new("public")
    }

    /// The private channel of one panel agreement.
    pub fn for_agreement(id: &AgreementId) -> Self {
        ChannelId(format!("agreement/{}", id.0))
    }

    pub fn is_public(&self) -> bool {
        self.0 == "public"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxKind {
    Registration,
    Agreement,
    FeePayment,
    BalancePosting,
    EnergySummary,
    EolDeclaration,
    FailureDeclaration,
    Refurbishment,
    Disposal,
    Shipment,
    Receipt,
    EscrowDeploy,
    EscrowDeposit,
    EscrowMature,
    EscrowWithdrawal,
    Mint,
    Burn,
    Trade,
    Donation,
    PolicyUpdate,
}

impl TxKind {
    pub fn tag(self) -> &'static str {
        match self {
            TxKind::Registration => "registration",
            TxKind::Agreement => "agreement",
            TxKind::FeePayment => "fee-payment",
            TxKind::BalancePosting => "balance-posting",
            TxKind::EnergySummary => "energy-summary",
            TxKind::EolDeclaration => "eol-declaration",
            TxKind::FailureDeclaration => "failure-declaration",
            TxKind::Refurbishment => "refurbishment",
            TxKind::Disposal => "disposal",
            TxKind::Shipment => "shipment",
            TxKind::Receipt => "receipt",
            TxKind::EscrowDeploy => "escrow-deploy",
            TxKind::EscrowDeposit => "escrow-deposit",
            TxKind::EscrowMature => "escrow-mature",
            TxKind::EscrowWithdrawal => "escrow-withdrawal",
            TxKind::Mint => "mint",
            TxKind::Burn => "burn",
            TxKind::Trade => "trade",
            TxKind::Donation => "donation",
            TxKind::PolicyUpdate => "policy-update",
        }
    }
}

/// Kind-specific transaction record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Registration(Registration),
    Agreement(PanelAgreement),
    Payment(FiatPaymentRecord),
    BalancePosting(BalancePosting),
    EnergySummary(EnergySummary),
    EolDeclaration(EolDeclaration),
    FailureDeclaration(FailureDeclaration),
    Refurbishment(Refurbishment),
    Disposal(Disposal),
    Shipment(Shipment),
    Receipt(Receipt),
    EscrowDeploy(EscrowDeploy),
    EscrowDeposit(EscrowDeposit),
    EscrowMature(EscrowMature),
    EscrowWithdrawal(EscrowWithdrawal),
    Mint(MintRecord),
    Burn(BurnRecord),
    Trade(TradeRecord),
    Donation(DonationRecord),
    PolicyUpdate(PolicyUpdate),
}

impl Payload {
    pub fn kind(&self) -> TxKind {
        match self {
            Payload::Registration(_) => TxKind::Registration,
            Payload::Agreement(_) => TxKind::Agreement,
            Payload::Payment(_) => TxKind::FeePayment,
            Payload::BalancePosting(_) => TxKind::BalancePosting,
            Payload::EnergySummary(_) => TxKind::EnergySummary,
            Payload::EolDeclaration(_) => TxKind::EolDeclaration,
            Payload::FailureDeclaration(_) => TxKind::FailureDeclaration,
            Payload::Refurbishment(_) => TxKind::Refurbishment,
            Payload::Disposal(_) => TxKind::Disposal,
            Payload::Shipment(_) => TxKind::Shipment,
            Payload::Receipt(_) => TxKind::Receipt,
            Payload::EscrowDeploy(_) => TxKind::EscrowDeploy,
            Payload::EscrowDeposit(_) => TxKind::EscrowDeposit,
            Payload::EscrowMature(_) => TxKind::EscrowMature,
            Payload::EscrowWithdrawal(_) => TxKind::EscrowWithdrawal,
            Payload::Mint(_) => TxKind::Mint,
            Payload::Burn(_) => TxKind::Burn,
            Payload::Trade(_) => TxKind::Trade,
            Payload::Donation(_) => TxKind::Donation,
            Payload::PolicyUpdate(_) => TxKind::PolicyUpdate,
        }
    }
}

impl Canonical for Payload {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.kind().tag());
        match self {
            Payload::Registration(p) => p.encode(e),
            Payload::Agreement(p) => p.encode(e),
            Payload::Payment(p) => p.encode(e),
            Payload::BalancePosting(p) => p.encode(e),
            Payload::EnergySummary(p) => p.encode(e),
            Payload::EolDeclaration(p) => p.encode(e),
            Payload::FailureDeclaration(p) => p.encode(e),
            Payload::Refurbishment(p) => p.encode(e),
            Payload::Disposal(p) => p.encode(e),
            Payload::Shipment(p) => p.encode(e),
            Payload::Receipt(p) => p.encode(e),
            Payload::EscrowDeploy(p) => p.encode(e),
            Payload::EscrowDeposit(p) => p.encode(e),
            Payload::EscrowMature(p) => p.encode(e),
            Payload::EscrowWithdrawal(p) => p.encode(e),
            Payload::Mint(p) => p.encode(e),
            Payload::Burn(p) => p.encode(e),
            Payload::Trade(p) => p.encode(e),
            Payload::Donation(p) => p.encode(e),
            Payload::PolicyUpdate(p) => p.encode(e),
        }
    }
}

/// A signed record of one actor action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Digest,
    pub author: ActorId,
    pub channel: ChannelId,
    pub kind: TxKind,
    pub payload: Payload,
    pub signature: SignatureBytes,
}

/// Digest of the canonical (author, channel, kind, payload) encoding.
pub fn compute_tx_id(author: &ActorId, channel: &ChannelId, kind: TxKind, payload: &Payload) -> Digest {
    let mut e = Encoder::new();
    e.str(author.as_str()).str(channel.as_str()).str(kind.tag());
    let mut inner = Encoder::new();
    payload.encode(&mut inner);
    e.bytes(&inner.finish());
    hash_digest(&e.finish())
}

impl Transaction {
    /// Build and sign a transaction.
    pub fn new(author: ActorId, channel: ChannelId, payload: Payload, key: &KeyPair) -> Self {
        let kind = payload.kind();
        let tx_id = compute_tx_id(&author, &channel, kind, &payload);
        let signature = key.sign(tx_id.as_bytes());
        Transaction {
            tx_id,
            author,
            channel,
            kind,
            payload,
            signature,
        }
    }

    pub fn recompute_id(&self) -> Digest {
        compute_tx_id(&self.author, &self.channel, self.kind, &self.payload)
    }

    /// Content matches its id, the declared kind matches the payload, and the
    /// signature verifies under `key`.
    pub fn verify(&self, key: &PublicKey) -> bool {
        self.kind == self.payload.kind()
            && self.recompute_id() == self.tx_id
            && super::keys::verify(key, self.tx_id.as_bytes(), &self.signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{NodeClass, Role};

    fn reg(actor: &str, key: &KeyPair) -> Transaction {
        Transaction::new(
            ActorId::from(actor),
            ChannelId::public(),
            Payload::Registration(Registration {
                actor: ActorId::from(actor),
                role: Role::Prosumer,
                node_class: NodeClass::Light,
                public_key: key.public_key(),
            }),
            key,
        )
    }

    #[test]
    fn id_covers_every_field() {
        let k = KeyPair::derive(0, "p1");
        let tx = reg("p1", &k);
        assert_eq!(tx.recompute_id(), tx.tx_id);
        assert!(tx.verify(&k.public_key()));

        let mut t2 = tx.clone();
        t2.channel = ChannelId::new("other");
        assert_ne!(t2.recompute_id(), tx.tx_id);

        let mut t3 = tx.clone();
        t3.author = ActorId::from("p2");
        assert!(!t3.verify(&k.public_key()));

        let mut t4 = tx.clone();
        t4.kind = TxKind::Mint;
        assert!(!t4.verify(&k.public_key()));
    }

    #[test]
    fn signature_fails_under_other_key() {
        let a = KeyPair::derive(0, "a");
        let b = KeyPair::derive(0, "b");
        let tx = reg("a", &a);
        assert!(!tx.verify(&b.public_key()));
    }

    #[test]
    fn json_roundtrip() {
        let k = KeyPair::derive(0, "p1");
        let tx = reg("p1", &k);
        let s = serde_json::to_string(&tx).unwrap();
        let back: Transaction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, tx);
        assert!(back.verify(&k.public_key()));
    }
}
