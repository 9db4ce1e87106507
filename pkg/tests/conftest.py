import numpy as np
import pytest

from genret.prompting import BehaviorEvent, InterestSummary, UserProfile
from genret.sid import SemanticId
from genret.trie import build
from genret.vocab import Vocabulary, vocab_from_sids

EXAMPLE_SIDS = {
    "Ad_66": SemanticId((12, 7, 4)),
    "Ad_245": SemanticId((12, 7, 14)),
    "Ad_112": SemanticId((12, 6, 22)),
}

# worked probability table: P(a_12)=0.6; P(b_7)=0.5, P(b_6)=0.4;
# P(c_4)=0.8, P(c_14)=0.4, P(c_22)=0.8
EXAMPLE_PROBS = {
    (): {"a_12": 0.6},
    ("a_12",): {"b_7": 0.5, "b_6": 0.4},
    ("a_12", "b_7"): {"c_4": 0.8, "c_14": 0.4},
    ("a_12", "b_6"): {"c_22": 0.8},
}


class TableScorer:
    """Scorer backed by an explicit per-prefix probability table; mass not
    listed goes to the unknown token so distributions still sum to 1."""

    def __init__(self, table, vocab: Vocabulary):
        self.table = table
        self.vocab = vocab

    def prob_dist(self, context, prefix_tokens):
        dist = np.zeros(len(self.vocab))
        row = self.table.get(tuple(prefix_tokens), {})
        for token, p in row.items():
            dist[self.vocab.lookup(token)] = p
        dist[self.vocab.lookup("<unk>")] += max(0.0, 1.0 - dist.sum())
        return dist


def worked_prompt_inputs():
    """Inputs reproducing the frozen full-prompt rendering example."""
    profile = UserProfile(
        age=22, gender="male", residence="Haidian, Beijing",
        education_level="bachelor's", occupation="Internet industry",
        consumption_level="medium",
    )
    summary = InterestSummary([
        ("emotion", 115), ("entertainment", 28), ("mental health", 8),
        ("education", 6), ("finance", 6),
    ])
    sid_a = SemanticId((51, 10, 67, 93, 0))
    sid_b = SemanticId((243, 136, 23, 245, 0))
    sid_c = SemanticId((164, 243, 38, 88, 0))
    events = [
        BehaviorEvent(32, "play short video", "content", title="reality"),
        BehaviorEvent(31, "click on ad", "ad", ad_id="x1", sid=sid_a),
        BehaviorEvent(27, "play short video", "content", title="shuttlecock"),
        BehaviorEvent(25, "Play short video", "content",
                      title="Emotional/psychological age test"),
        BehaviorEvent(22, "Conversion ad", "ad", ad_id="x2", sid=sid_b),
        BehaviorEvent(19, "Click ad", "ad", ad_id="x3", sid=sid_c),
        BehaviorEvent(16, "Conversion ad", "ad", ad_id="x1", sid=sid_a),
    ]
    return profile, summary, events


WORKED_PROMPT = (
    "The following is an instruction describing a task. Please give a "
    "response to complete this request appropriately.\n"
    "22-year-old male, resident in Haidian, Beijing, with a bachelor's "
    "degree, working in Internet industry, with a medium consumption level. "
    "The categories that have been frequently interacted recently are "
    "(format: category^interaction times): emotion^115 times; "
    "entertainment^28 times; mental health^8 times; education^6 times; "
    "finance^6 times;\n"
    "The most recent interaction behavior sequence details "
    "(format: time^behavior type^title) are "
    "32 days ago^play short video^reality; "
    "31 days ago^click on ad^<a_51, b_10, c_67, d_93, e_0>; "
    "27 days ago^play short video^shuttlecock; "
    "25 days ago^Play short video^Emotional/psychological age test; "
    "22 days ago^Conversion ad^<a_243, b_136, c_23, d_245, e_0>; "
    "19 days ago^Click ad^<a_164, b_243, c_38, d_88, e_0>; "
    "16 days ago^Conversion ad^<a_51, b_10, c_67, d_93, e_0>. "
    "what ad will the user be interested in next time?"
)


@pytest.fixture
def example_trie():
    return build(EXAMPLE_SIDS)


@pytest.fixture
def example_scorer():
    vocab = vocab_from_sids(EXAMPLE_SIDS)
    return TableScorer(EXAMPLE_PROBS, vocab)
