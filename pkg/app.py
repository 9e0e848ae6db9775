"""
app.py
======================

MissFormer のコマンドラインエントリーポイント。

使い方:
    python app.py generate --regime object --n 1000 --seed 7 --out runs/corpus.txt
    python app.py train --task reconstruction --samples 1000 --epochs 1000 --d-model 64 --heads 1 --layers 1
    python app.py eval --ckpt runs/train/model.bin --task reconstruction
    python app.py plot-attn --ckpt runs/train/model.bin --sample 3 --out runs/attn.svg

前提:
- config.toml があればその値を既定値として使う（コマンドライン引数が優先）
- 環境変数 MISSFORMER_OUTPUT_DIR で既定の出力先を変えられる
"""

from __future__ import annotations

from missformer.cli import main

if __name__ == "__main__":
    main()
