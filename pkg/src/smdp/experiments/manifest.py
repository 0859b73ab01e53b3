"""
This submodule keeps the run manifest: a JSON file at the root of a run
directory listing, for every completed stage, the configuration hash it
was produced from, its timestamps and the artifacts it wrote. Stages
consult it to skip work that is already done and to refuse overwriting
artifacts produced from a different configuration.
"""

import datetime
import json
import os
import threading
import typing

import loguru

import smdp.__version__
import smdp.exceptions


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "MANIFEST_FILENAME",

    "StageRecord",
    "RunManifest",

    "utc_timestamp",
]


MANIFEST_FILENAME = "manifest.json"


logger = loguru.logger

# manifest files may be shared by concurrently running cells
_manifest_lock = threading.RLock()


def utc_timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class StageRecord(typing.NamedTuple):
    config_hash: str
    started_at: str
    completed_at: str
    artifacts: typing.List[str]
    library_version: str = smdp.__version__.__version__

    @classmethod
    def from_dict(cls, value: typing.Dict[str, typing.Any]) -> "StageRecord":
        return cls(
            config_hash=value["config_hash"],
            started_at=value.get("started_at", ""),
            completed_at=value.get("completed_at", ""),
            artifacts=list(value.get("artifacts", [])),
            library_version=value.get("library_version", ""),
        )

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return dict(self._asdict())


class RunManifest:
    """
    The manifest of one run directory. Stage keys are free-form strings
    such as ``generate`` or ``train/multi-step``; artifact paths are stored
    relative to the run directory.
    """

    def __init__(self, root: str):
        self._root = root
        self._stages: typing.Dict[str, StageRecord] = dict()
        self.reload()

    def __repr__(self):
        return "RunManifest(root={!r}, stages={})".format(self._root, sorted(self._stages.keys()))

    @property
    def root(self) -> str:
        return self._root

    @property
    def path(self) -> str:
        return os.path.join(self._root, MANIFEST_FILENAME)

    @property
    def stages(self) -> typing.Dict[str, StageRecord]:
        return dict(self._stages)

    def reload(self) -> None:
        with _manifest_lock:
            if not os.path.exists(self.path):
                self._stages = dict()
                return
            try:
                with open(self.path) as f:
                    data = json.load(f)
            except json.JSONDecodeError as exc:
                raise smdp.exceptions.SmdpConfigError("run manifest '{}' is corrupted: {}".format(self.path, exc))
            self._stages = {
                key: StageRecord.from_dict(value)
                for (key, value) in data.get("stages", dict()).items()
            }

    def save(self) -> str:
        with _manifest_lock:
            os.makedirs(self._root, exist_ok=True)
            data = {
                "library_version": smdp.__version__.__version__,
                "updated_at": utc_timestamp(),
                "stages": {key: record.to_dict() for (key, record) in sorted(self._stages.items())},
            }
            tmp_path = self.path + ".tmp"
            with open(tmp_path, "w") as f:
                json.dump(data, f, indent=2, sort_keys=True)
            os.replace(tmp_path, self.path)
        return self.path

    def artifact_path(self, name: str) -> str:
        return os.path.join(self._root, name)

    def get(self, key: str) -> typing.Optional[StageRecord]:
        return self._stages.get(key)

    def is_complete(self, key: str, config_hash: str) -> bool:
        """Whether the stage completed with this hash and all its artifacts are still present."""
        record = self._stages.get(key)
        if record is None or record.config_hash != config_hash:
            return False
        return all(os.path.exists(self.artifact_path(name)) for name in record.artifacts)

    def check_conflict(self, key: str, config_hash: str, force: bool = False) -> None:
        """
        :raises ArtifactConflictError: if the stage was completed from a
            different configuration and :py:data:`force` is not set
        """
        record = self._stages.get(key)
        if record is None or record.config_hash == config_hash:
            return
        if force:
            logger.warning(
                "Overwriting stage '{}' of '{}' (hash {} replaced by {}).",
                key, self._root, record.config_hash[:12], config_hash[:12])
            return
        raise smdp.exceptions.ArtifactConflictError(
            "stage '{}' in '{}' was produced from configuration {}, not {}; use --force to overwrite".format(
                key, self._root, record.config_hash[:12], config_hash[:12]))

    def record(
            self,
            key: str,
            config_hash: str,
            artifacts: typing.Sequence[str],
            started_at: str,
    ) -> StageRecord:
        """Records a completed stage (artifact paths absolute or relative to the root) and saves."""
        relative = [
            os.path.relpath(path, self._root) if os.path.isabs(path) else path
            for path in artifacts
        ]
        record = StageRecord(
            config_hash=config_hash,
            started_at=started_at,
            completed_at=utc_timestamp(),
            artifacts=relative,
        )
        with _manifest_lock:
            # other cells may have written their stages in the meantime
            self.reload()
            self._stages[key] = record
            self.save()
        logger.debug("Recorded stage '{}' in '{}' ({} artifacts).", key, self.path, len(relative))
        return record
