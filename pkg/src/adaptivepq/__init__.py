"""Adaptive concurrent priority queues: a relaxed skip list, Nuddle delegation and SmartPQ."""

from adaptivepq.adaptive import AWARE, OBLIVIOUS, DecisionLoop, SmartPQ, smart_decide
from adaptivepq.classify import DecisionTree, FeatureVector, label, predict, train
from adaptivepq.delegate import NuddlePQ
from adaptivepq.pqcore import Entry, SkipListPQ, SprayParams, spray_rank_bound

__all__ = [
    "AWARE",
    "OBLIVIOUS",
    "DecisionLoop",
    "DecisionTree",
    "Entry",
    "FeatureVector",
    "NuddlePQ",
    "SkipListPQ",
    "SmartPQ",
    "SprayParams",
    "label",
    "predict",
    "smart_decide",
    "spray_rank_bound",
    "train",
]
