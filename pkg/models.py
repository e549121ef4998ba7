import hashlib
import hmac
import json
import logging
import os
from datetime import datetime, timezone

from sqlalchemy import ForeignKey, Integer, LargeBinary, String, Text, UniqueConstraint, create_engine, select
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship, sessionmaker
from sqlalchemy.pool import StaticPool

from keymat import AccessSecret

log = logging.getLogger('models')

DEFAULT_DATABASE_URL = 'sqlite://'


def _utcnow():
    return datetime.now(timezone.utc)


def credential_digest(credential):
    if isinstance(credential, str):
        credential = credential.encode('utf-8')
    return hashlib.sha256(credential).hexdigest()


class Base(DeclarativeBase):
    pass


class Principal(Base):
    __tablename__ = 'principals'

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    name: Mapped[str] = mapped_column(String(64), unique=True, nullable=False)
    credential_digest: Mapped[str] = mapped_column(String(64), nullable=False)
    created_at: Mapped[datetime] = mapped_column(default=_utcnow)

    grants: Mapped[list['ScopeGrant']] = relationship(back_populates='principal', cascade='all, delete-orphan')

    @classmethod
    def get_by_name(cls, session, name):
        """Get a principal by its registered name."""
        return session.scalars(select(cls).filter_by(name=name)).first()

    @classmethod
    def register(cls, session, name, credential):
        """Create the principal, or replace the credential of an existing one."""
        principal = cls.get_by_name(session, name)
        if principal:
            principal.credential_digest = credential_digest(credential)
        else:
            principal = cls(name=name, credential_digest=credential_digest(credential))
            session.add(principal)
        session.commit()
        return principal

    def check_credential(self, credential):
        return hmac.compare_digest(self.credential_digest, credential_digest(credential))

    @property
    def granted_paths(self):
        return sorted(grant.path for grant in self.grants)

    def to_dict(self):
        return {
            'name': self.name,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'granted_paths': self.granted_paths,
        }


class ScopeGrant(Base):
    __tablename__ = 'scope_grants'

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    principal_id: Mapped[int] = mapped_column(ForeignKey('principals.id'), nullable=False)
    path: Mapped[str] = mapped_column(String(255), nullable=False)

    principal: Mapped[Principal] = relationship(back_populates='grants')

    __table_args__ = (
        UniqueConstraint('principal_id', 'path', name='unique_principal_path'),
    )

    @classmethod
    def grant(cls, session, principal, path):
        existing = session.scalars(select(cls).filter_by(principal_id=principal.id, path=path)).first()
        if existing:
            return existing
        grant = cls(principal=principal, path=path)
        session.add(grant)
        session.commit()
        return grant


class SecretRecord(Base):
    __tablename__ = 'access_secrets'

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    key_id: Mapped[int] = mapped_column(Integer, nullable=False)
    epoch: Mapped[int] = mapped_column(Integer, nullable=False)
    secret: Mapped[bytes] = mapped_column(LargeBinary, nullable=False)
    resource_scope: Mapped[str] = mapped_column(Text, nullable=False)  # JSON list of paths
    stored_at: Mapped[datetime] = mapped_column(default=_utcnow)

    __table_args__ = (
        UniqueConstraint('key_id', 'epoch', name='unique_key_epoch'),
    )

    @classmethod
    def store(cls, session, access_secret):
        record = cls(
            key_id=access_secret.key_id,
            epoch=access_secret.epoch,
            secret=access_secret.secret,
            resource_scope=json.dumps(list(access_secret.resource_scope)),
        )
        session.add(record)
        session.commit()
        return record

    @classmethod
    def latest_for_key(cls, session, key_id):
        """Highest-epoch record for a key_id, or None."""
        return session.scalars(select(cls).filter_by(key_id=key_id).order_by(cls.epoch.desc())).first()

    @classmethod
    def latest_all(cls, session):
        """Current (highest-epoch) record of every key_id."""
        latest = {}
        for record in session.scalars(select(cls).order_by(cls.key_id, cls.epoch)):
            latest[record.key_id] = record
        return list(latest.values())

    def to_access_secret(self):
        return AccessSecret(self.key_id, self.secret, tuple(json.loads(self.resource_scope)), self.epoch)

    def to_dict(self):
        # secret bytes stay out of display output
        return {
            'key_id': self.key_id,
            'epoch': self.epoch,
            'resource_scope': json.loads(self.resource_scope),
            'stored_at': self.stored_at.isoformat() if self.stored_at else None,
        }


class CertificateRecord(Base):
    __tablename__ = 'certificates'

    subject_id: Mapped[str] = mapped_column(String(32), primary_key=True)
    encoded: Mapped[bytes] = mapped_column(LargeBinary, nullable=False)
    served_paths: Mapped[str] = mapped_column(Text, default='[]')  # JSON list of resource paths
    published_at: Mapped[datetime] = mapped_column(default=_utcnow, onupdate=_utcnow)

    @classmethod
    def publish(cls, session, subject_id, encoded, served_paths=()):
        record = session.get(cls, subject_id)
        if record:
            record.encoded = encoded
            record.served_paths = json.dumps(list(served_paths))
        else:
            record = cls(subject_id=subject_id, encoded=encoded, served_paths=json.dumps(list(served_paths)))
            session.add(record)
        session.commit()
        return record

    @classmethod
    def get_by_subject(cls, session, subject_id):
        return session.get(cls, subject_id)

    @classmethod
    def serving(cls, session, paths):
        """Certificates of producers serving any of `paths`."""
        wanted = set(paths)
        return [record for record in session.scalars(select(cls).order_by(cls.subject_id))
                if wanted & set(record.paths)]

    @property
    def paths(self):
        return json.loads(self.served_paths) if self.served_paths else []

    def to_dict(self):
        return {
            'subject_id': self.subject_id,
            'served_paths': self.paths,
            'size': len(self.encoded),
            'published_at': self.published_at.isoformat() if self.published_at else None,
        }


def create_registry(url=None):
    """
    Build a session factory for the Authorization Server registry and create the tables.

    Args:
        url: SQLAlchemy database URL; defaults to OSCAR_DATABASE_URL, then in-memory SQLite

    Returns:
        sessionmaker bound to the engine
    """
    url = url or os.environ.get('OSCAR_DATABASE_URL', DEFAULT_DATABASE_URL)
    kwargs = {}
    if url in ('sqlite://', 'sqlite:///:memory:'):
        # one shared connection, otherwise every session sees an empty database
        kwargs = {'poolclass': StaticPool, 'connect_args': {'check_same_thread': False}}
    engine = create_engine(url, **kwargs)
    Base.metadata.create_all(engine)
    log.debug(f"Registry tables ready at {engine.url.render_as_string(hide_password=True)}")
    return sessionmaker(bind=engine, expire_on_commit=False)
