"""Prefix tree over semantic IDs with end-of-ad markers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .sid import SemanticId, parse_token, render_token


class TrieError(ValueError):
    pass


@dataclass
class TrieNode:
    children: dict[int, "TrieNode"] = field(default_factory=dict)
    end_of_ad: str | None = None

    def child_codes(self) -> list[int]:
        return sorted(self.children)


@dataclass
class Trie:
    root: TrieNode
    depth: int
    ad_count: int


def build(sids: dict[str, SemanticId]) -> Trie:
    """Insert every S-ID sequence code by code, marking ad ends at leaves.

    Insertion is idempotent for repeated identical sequences; ragged lengths
    are rejected.
    """
    root = TrieNode()
    depth = 0
    count = 0
    for ad_id in sorted(sids):
        sid = sids[ad_id]
        if depth == 0:
            depth = len(sid)
        elif len(sid) != depth:
            raise TrieError(
                f"ragged S-ID length for {ad_id!r}: {len(sid)} != {depth}"
            )
        cur = root
        for code in sid.codes:
            if code not in cur.children:
                cur.children[code] = TrieNode()
            cur = cur.children[code]
        if cur.end_of_ad is None:
            count += 1
        cur.end_of_ad = ad_id
    return Trie(root=root, depth=depth, ad_count=count)


def _walk(trie: Trie, codes) -> TrieNode | None:
    cur = trie.root
    for code in codes:
        nxt = cur.children.get(code)
        if nxt is None:
            return None
        cur = nxt
    return cur


def valid_children(trie: Trie, prefix) -> list[int]:
    """Codes of children under the node reached by prefix, ascending.

    An absent prefix or a leaf yields an empty list.
    """
    node = _walk(trie, prefix)
    if node is None:
        return []
    return node.child_codes()


def valid_children_tokens(trie: Trie, prefix_tokens) -> set[str]:
    codes = [parse_token(t)[1] for t in prefix_tokens]
    level = len(codes)
    return {render_token(level, c) for c in valid_children(trie, codes)}


def contains(trie: Trie, sid: SemanticId) -> bool:
    node = _walk(trie, sid.codes)
    return node is not None and node.end_of_ad is not None


def lookup_ad(trie: Trie, sid: SemanticId) -> str | None:
    node = _walk(trie, sid.codes)
    return node.end_of_ad if node is not None else None


def all_sids(trie: Trie) -> dict[str, SemanticId]:
    """Reconstruct the ad_id -> S-ID mapping from root-to-marker paths."""
    out: dict[str, SemanticId] = {}

    def rec(node: TrieNode, path: list[int]):
        if node.end_of_ad is not None:
            out[node.end_of_ad] = SemanticId(tuple(path))
        for code in node.child_codes():
            rec(node.children[code], path + [code])

    rec(trie.root, [])
    return out


def save_trie(trie: Trie, path) -> None:
    """Serialize as a preorder listing of (code, child_count, ad_id)."""
    rows = []

    def rec(code: int | None, node: TrieNode):
        rows.append([code, len(node.children), node.end_of_ad])
        for c in node.child_codes():
            rec(c, node.children[c])

    rec(None, trie.root)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"depth": trie.depth, "ad_count": trie.ad_count, "nodes": rows}, fh)


def load_trie(path) -> Trie:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    rows = payload["nodes"]
    pos = 0

    def rec() -> tuple[int | None, TrieNode]:
        nonlocal pos
        code, n_children, ad_id = rows[pos]
        pos += 1
        node = TrieNode(end_of_ad=ad_id)
        for _ in range(n_children):
            child_code, child = rec()
            node.children[child_code] = child
        return code, node

    _, root = rec()
    return Trie(root=root, depth=payload["depth"], ad_count=payload["ad_count"])
