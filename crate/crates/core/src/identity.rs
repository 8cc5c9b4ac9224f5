//! Actor registry, role permissions and channel-scoped visibility.
//!
//! Channels are a visibility filter over the one shared chain. Regulators
//! (and green activists, modeled as regulators) observe every channel.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{
    ActorId, Canonical, ChannelId, Encoder, KeyPair, Payload, PublicKey, Transaction, TxKind,
};
use crate::money::{Coins, Energy, Tokens, Usd};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prosumer,
    Manufacturer,
    Utility,
    Recycler,
    Refurbisher,
    Regulator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Full,
    Light,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Prosumer => "prosumer",
            Role::Manufacturer => "manufacturer",
            Role::Utility => "utility",
            Role::Recycler => "recycler",
            Role::Refurbisher => "refurbisher",
            Role::Regulator => "regulator",
        }
    }

    /// Consortium members run full nodes; prosumers and refurbishers are light.
    pub fn node_class(self) -> NodeClass {
        match self {
            Role::Manufacturer | Role::Utility | Role::Recycler | Role::Regulator => NodeClass::Full,
            Role::Prosumer | Role::Refurbisher => NodeClass::Light,
        }
    }

    pub fn permits(self, class: NodeClass) -> bool {
        self.node_class() == class
    }
}

/// Ledger-level authorship rule: which roles may sign which kinds.
pub fn may_author(role: Role, kind: TxKind) -> bool {
    match kind {
        TxKind::BalancePosting | TxKind::EnergySummary => role == Role::Utility,
        _ => true,
    }
}

/// On-ledger record of an actor joining the consortium.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub actor: ActorId,
    pub role: Role,
    pub node_class: NodeClass,
    pub public_key: PublicKey,
}

impl Canonical for Registration {
    fn encode(&self, e: &mut Encoder) {
        e.str(self.actor.as_str())
            .str(self.role.tag())
            .bool(self.node_class == NodeClass::Full)
            .bytes(&self.public_key.0);
    }
}

/// Monthly gross energy per prosumer, posted on the public channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub month: u64,
    pub totals: Vec<(ActorId, Energy)>,
}

impl Canonical for EnergySummary {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.month).list(&self.totals, |e, (a, kwh)| {
            e.str(a.as_str()).i64(kwh.atoms());
        });
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wallet {
    pub fiat: Usd,
    pub tokens: Tokens,
    pub coins: Coins,
}

#[derive(Clone, Debug)]
pub struct Actor {
    pub id: ActorId,
    pub role: Role,
    pub node_class: NodeClass,
    pub keypair: KeyPair,
    pub wallet: Wallet,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub id: ChannelId,
    pub members: BTreeSet<ActorId>,
    pub observers: BTreeSet<ActorId>,
}

impl Channel {
    pub fn can_read(&self, actor: &ActorId) -> bool {
        self.members.contains(actor) || self.observers.contains(actor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action<'a> {
    CreateBlock,
    CreateTransaction(TxKind),
    Audit(&'a ChannelId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("{role:?} cannot run a {class:?} node")]
    RoleNodeClassMismatch { role: Role, class: NodeClass },
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("actor {0} already registered")]
    DuplicateActor(ActorId),
    #[error("{actor} needs {needed} but holds {available}")]
    InsufficientFunds {
        actor: ActorId,
        needed: Usd,
        available: Usd,
    },
}

/// Actor roster and channel table. Mutated only between ticks.
#[derive(Clone, Debug)]
pub struct Registry {
    seed: u64,
    actors: BTreeMap<ActorId, Actor>,
    channels: BTreeMap<ChannelId, Channel>,
}

impl Registry {
    /// `seed` feeds deterministic key derivation.
    pub fn new(seed: u64) -> Self {
        let mut channels = BTreeMap::new();
        channels.insert(
            ChannelId::public(),
            Channel {
                id: ChannelId::public(),
                ..Default::default()
            },
        );
        Registry {
            seed,
            actors: BTreeMap::new(),
            channels,
        }
    }

    /// Register an actor with a fresh keypair and empty wallet; returns the
    /// self-signed registration transaction for the public channel.
    pub fn register_actor(
        &mut self,
        id: ActorId,
        role: Role,
        node_class: NodeClass,
    ) -> Result<Transaction, IdentityError> {
        if !role.permits(node_class) {
            return Err(IdentityError::RoleNodeClassMismatch {
                role,
                class: node_class,
            });
        }
        if self.actors.contains_key(&id) {
            return Err(IdentityError::DuplicateActor(id));
        }
        let keypair = KeyPair::derive(self.seed, id.as_str());
        let tx = Transaction::new(
            id.clone(),
            ChannelId::public(),
            Payload::Registration(Registration {
                actor: id.clone(),
                role,
                node_class,
                public_key: keypair.public_key(),
            }),
            &keypair,
        );
        if let Some(public) = self.channels.get_mut(&ChannelId::public()) {
            public.members.insert(id.clone());
        }
        if role == Role::Regulator {
            for ch in self.channels.values_mut() {
                ch.observers.insert(id.clone());
            }
        }
        self.actors.insert(
            id.clone(),
            Actor {
                id,
                role,
                node_class,
                keypair,
                wallet: Wallet::default(),
            },
        );
        Ok(tx)
    }

    pub fn actor(&self, id: &ActorId) -> Result<&Actor, IdentityError> {
        self.actors
            .get(id)
            .ok_or_else(|| IdentityError::UnknownActor(id.clone()))
    }

    pub fn actor_mut(&mut self, id: &ActorId) -> Result<&mut Actor, IdentityError> {
        self.actors
            .get_mut(id)
            .ok_or_else(|| IdentityError::UnknownActor(id.clone()))
    }

    pub fn actors(&self) -> impl Iterator<Item = &Actor> {
        self.actors.values()
    }

    pub fn contains(&self, id: &ActorId) -> bool {
        self.actors.contains_key(id)
    }

    pub fn role_of(&self, id: &ActorId) -> Option<Role> {
        self.actors.get(id).map(|a| a.role)
    }

    pub fn wallet(&self, id: &ActorId) -> Result<&Wallet, IdentityError> {
        self.actor(id).map(|a| &a.wallet)
    }

    /// Move fiat between actor wallets; fails without side effects when the
    /// payer cannot cover it.
    pub fn transfer_fiat(&mut self, from: &ActorId, to: &ActorId, amount: Usd) -> Result<(), IdentityError> {
        self.actor(to)?;
        let payer = self.actor_mut(from)?;
        if payer.wallet.fiat < amount {
            return Err(IdentityError::InsufficientFunds {
                actor: from.clone(),
                needed: amount,
                available: payer.wallet.fiat,
            });
        }
        payer.wallet.fiat -= amount;
        self.actor_mut(to)?.wallet.fiat += amount;
        Ok(())
    }

    pub fn credit_fiat(&mut self, to: &ActorId, amount: Usd) -> Result<(), IdentityError> {
        self.actor_mut(to)?.wallet.fiat += amount;
        Ok(())
    }

    pub fn debit_fiat(&mut self, from: &ActorId, amount: Usd) -> Result<(), IdentityError> {
        let a = self.actor_mut(from)?;
        if a.wallet.fiat < amount {
            return Err(IdentityError::InsufficientFunds {
                actor: from.clone(),
                needed: amount,
                available: a.wallet.fiat,
            });
        }
        a.wallet.fiat -= amount;
        Ok(())
    }

    pub fn keypair(&self, id: &ActorId) -> Result<&KeyPair, IdentityError> {
        self.actor(id).map(|a| &a.keypair)
    }

    /// Create (or extend) a private channel. Every registered regulator is an
    /// observer.
    pub fn open_channel(&mut self, id: ChannelId, members: impl IntoIterator<Item = ActorId>) {
        let observers: BTreeSet<ActorId> = self
            .actors
            .values()
            .filter(|a| a.role == Role::Regulator)
            .map(|a| a.id.clone())
            .collect();
        let ch = self.channels.entry(id.clone()).or_insert_with(|| Channel {
            id,
            ..Default::default()
        });
        ch.members.extend(members);
        ch.observers.extend(observers);
    }

    pub fn channel(&self, id: &ChannelId) -> Option<&Channel> {
        self.channels.get(id)
    }

    /// Role-based permission check.
    pub fn authorize(&self, actor: &ActorId, action: Action<'_>) -> Result<Decision, IdentityError> {
        let a = self.actor(actor)?;
        let allow = match action {
            Action::CreateBlock => a.node_class == NodeClass::Full,
            Action::CreateTransaction(kind) => may_author(a.role, kind),
            Action::Audit(channel) => {
                a.role == Role::Regulator
                    || self
                        .channels
                        .get(channel)
                        .map(|c| c.can_read(actor))
                        .unwrap_or(false)
            }
        };
        Ok(if allow { Decision::Allow } else { Decision::Deny })
    }

    /// Whether `actor` may read transactions on `channel`.
    pub fn can_read(&self, actor: &ActorId, channel: &ChannelId) -> bool {
        if channel.is_public() {
            return self.actors.contains_key(actor);
        }
        self.channels
            .get(channel)
            .map(|c| c.can_read(actor))
            .unwrap_or(false)
    }

    /// Transactions readable by `actor`: those on channels where it is a
    /// member or observer, plus the public channel (registrations and the
    /// gross energy summaries).
    pub fn visible_transactions<'t>(
        &self,
        actor: &ActorId,
        txs: impl IntoIterator<Item = &'t Transaction>,
    ) -> Result<Vec<&'t Transaction>, IdentityError> {
        self.actor(actor)?;
        Ok(txs
            .into_iter()
            .filter(|t| self.can_read(actor, &t.channel))
            .collect())
    }
}
