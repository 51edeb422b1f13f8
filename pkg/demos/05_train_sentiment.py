"""
Training the transcript sentiment model
=======================================

Feature selection ranks unigrams and bigrams by mutual information with
the label; an L2 logistic regression is then fit by gradient descent
with a backtracking line search, picking its regularization strength by
cross-validation. The saved model is a plain JSON object.
"""

import json
import tempfile

from affectsense.textsent import (
    feature_mi,
    score_sentiment,
    select_features_mi,
    train_logistic,
)

corpus = [
    ("what a great bright morning meeting", "pos"),
    ("great demo and a kind helpful crowd", "pos"),
    ("bright ideas, great energy today", "pos"),
    ("calm, kind, and quietly great", "pos"),
    ("lovely bright sketches all around", "pos"),
    ("kind words after a great review", "pos"),
    ("terrible meeting, nothing worked", "neg"),
    ("the demo crashed, awful afternoon", "neg"),
    ("broken build and terrible mood", "neg"),
    ("awful weather, worse bugs", "neg"),
    ("a terrible, broken, hopeless draft", "neg"),
    ("bugs everywhere, awful release", "neg"),
]

# Mutual information separates predictive words from filler.
for word in ("great", "terrible", "meeting", "demo"):
    print(f"MI({word!r}) = {feature_mi(corpus, word):.4f} bits")

features = select_features_mi(corpus, 12)
print(f"selected features: {features}")

model = train_logistic(corpus, features)
print(f"fit {len(model.features)} weights, bias {model.bias:+.3f}, "
      f"l2 {model.l2}")
if model.cv_accuracy is not None:
    print(f"cross-validated accuracy: {model.cv_accuracy:.2f}")

for text in ("a great bright plan", "another terrible broken thing",
             "the meeting happened"):
    print(f"  p(pos | {text!r}) = {score_sentiment(model, text):.3f}")

# The on-disk form holds exactly the features, weights, and bias.
with tempfile.NamedTemporaryFile("r", suffix=".json") as fh:
    model.save(fh.name)
    print("saved keys:", sorted(json.load(open(fh.name))))
