"""Per-session FIFO input buffering with semantic batching.

Items arriving while a turn is processing are queued; when the turn
finalizes, consecutive text items at the head are merged into one prompt
(newline-joined) while commands always dequeue alone, in order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

TEXT = "text"
COMMAND = "command"

PROMPT = "prompt"


def classify(content: str) -> str:
    return COMMAND if content.startswith("/") else TEXT


@dataclass(frozen=True)
class InboundItem:
    kind: str
    content: str
    enqueue_seq: int


@dataclass(frozen=True)
class Batch:
    kind: str        # prompt | command
    content: str
    item_count: int


class SessionQueue:
    def __init__(self) -> None:
        self._items: deque[InboundItem] = deque()
        self._seq = 0
        self.enqueued_total = 0
        self.processed_total = 0
        self.purged_total = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, content: str) -> InboundItem:
        self._seq += 1
        item = InboundItem(kind=classify(content), content=content, enqueue_seq=self._seq)
        self._items.append(item)
        self.enqueued_total += 1
        return item

    def dequeue_batch(self) -> Batch | None:
        """Next unit of work: a merged text run or a single command."""
        if not self._items:
            return None
        head = self._items[0]
        if head.kind == COMMAND:
            self._items.popleft()
            self.processed_total += 1
            return Batch(kind=COMMAND, content=head.content, item_count=1)
        texts = []
        while self._items and self._items[0].kind == TEXT:
            texts.append(self._items.popleft().content)
        self.processed_total += len(texts)
        return Batch(kind=PROMPT, content="\n".join(texts), item_count=len(texts))

    def purge(self) -> int:
        n = len(self._items)
        self._items.clear()
        self.purged_total += n
        return n

    def snapshot(self) -> list[str]:
        return [item.content for item in self._items]
