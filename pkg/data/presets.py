"""Named experiment configurations at toy scale.

Attack hyperparameters follow the usual PLM recipe: ascent step size and
decision boundary 1e-1, two ascent steps while pre-training and one while
fine-tuning, dropout 0.1, warmup 6%, gradient clipping 1.0, weight decay 0.01.
"""

TOY_ENCODER = {
    "num_layers": 2,
    "hidden_size": 32,
    "num_heads": 4,
    "intermediate_size": 64,
    "vocab_size": 64,
    "max_seq_len": 32,
    "dropout_rate": 0.1,
}

COMMON_TRAIN = {
    "learning_rate": 1e-3,
    "mix_lambda": 0.5,
    "batch_size": 32,
    "max_steps": 2000,
    "warmup_proportion": 0.06,
    "weight_decay": 0.01,
    "gradient_clip": 1.0,
}

MOTIF_TASK = {
    "kind": "sequence_classification",
    "vocab_size": 64,
    "seq_len": 16,
    "min_seq_len": 10,
    "num_classes": 2,
    "num_train": 8192,
    "num_eval": 256,
    "motif_length": 4,
}

# the grid attacks the least similar token, the quantity its trend plots report
GRID_REPRESENTATION_TERM = {"temperature": 10.0, "similarity_aggregation": "min"}

PRESET_DATABASE = [
    {
        "name": "toy-mlm-pretrain",
        "description": "CreAT pre-training of the toy encoder on the Markov-chain MLM task",
        "category": "Pre-training",
        "config": {
            "encoder": TOY_ENCODER,
            "train": {
                **COMMON_TRAIN,
                "attack": {"mode": "CreAT", "ascent_step_size": 1e-1, "decision_boundary": 1e-1, "ascent_steps": 2},
                "task": {"kind": "toy_mlm", "vocab_size": 64, "seq_len": 16, "min_seq_len": 10,
                         "num_train": 2048, "num_eval": 256},
            },
        },
    },
    {
        "name": "motif-finetune",
        "description": "CreAT fine-tuning on motif-order classification",
        "category": "Fine-tuning",
        "config": {
            "encoder": TOY_ENCODER,
            "train": {
                **COMMON_TRAIN,
                "attack": {"mode": "CreAT", "ascent_step_size": 1e-1, "decision_boundary": 1e-1, "ascent_steps": 1},
                "task": MOTIF_TASK,
            },
        },
    },
    {
        "name": "motif-baseline",
        "description": "Standard fine-tuning with no perturbation on motif-order classification",
        "category": "Fine-tuning",
        "config": {
            "encoder": TOY_ENCODER,
            "train": {**COMMON_TRAIN, "attack": {"mode": "none"}, "task": MOTIF_TASK},
        },
    },
    {
        "name": "tagging-finetune",
        "description": "CreAT fine-tuning on motif tagging (token classification)",
        "category": "Fine-tuning",
        "config": {
            "encoder": TOY_ENCODER,
            "train": {
                **COMMON_TRAIN,
                "attack": {"mode": "CreAT", "ascent_step_size": 1e-1, "decision_boundary": 1e-1, "ascent_steps": 1},
                "task": {**MOTIF_TASK, "kind": "token_classification"},
            },
        },
    },
    {
        "name": "motif-grid",
        "description": "All training methods over five seeds on motif-order classification",
        "category": "Comparison",
        "config": {
            "encoder": TOY_ENCODER,
            "train": {
                **COMMON_TRAIN,
                "attack": {"mode": "AT", "ascent_step_size": 1e-1, "decision_boundary": 1e-1, "ascent_steps": 1,
                           **GRID_REPRESENTATION_TERM},
                "task": MOTIF_TASK,
            },
            "seeds": [0, 1, 2, 3, 4],
            "modes": ["none", "RPT", "AT", "CreAT", "CreAT_minus"],
        },
    },
]
