"""
命令行入口: gen-data / train / eval / gradcheck / inspect-graph

退出码: 0 成功，1 参数或输入校验失败，2 运行时错误
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from ..controllers.dataset_controller import DatasetController
from ..controllers.evaluation_controller import EvaluationController, select_split
from ..controllers.gradcheck_controller import GradcheckController
from ..controllers.training_controller import TrainingController
from ..models.configs import (GRADCHECK_MODULES, SYNTHETIC_ALIASES, EvalConfig, GradcheckConfig,
                              InspectConfig, ModelConfig, SyntheticSpec, TrainConfig, apply_flat,
                              configs_from_flat, configs_to_flat, to_flat)
from ..models.errors import ValidationError
from ..services.checkpoint_service import load_checkpoint
from ..services.config_service import format_config, merge_values, read_config_file
from ..services.path_service import PathService

logger = logging.getLogger('graphac.cli')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class _HelpFormatter(argparse.HelpFormatter):
    """固定宽度，选项说明另起一行缩进，帮助输出与终端宽度无关"""

    def __init__(self, prog):
        super().__init__(prog, max_help_position=8, width=100)


class _Parser(argparse.ArgumentParser):
    """参数错误抛出 ValidationError，由 run() 统一映射为退出码 1"""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault('allow_abbrev', False)
        kwargs.setdefault('add_help', False)
        kwargs.setdefault('formatter_class', _HelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _train_defaults() -> Dict[str, str]:
    flat = configs_to_flat(ModelConfig(), TrainConfig())
    # 由数据集决定，不作为训练参数
    flat.pop('vocab_size')
    flat.pop('mel_bins')
    return flat


DEFAULTS = {
    'gen-data': lambda: to_flat(SyntheticSpec(), SYNTHETIC_ALIASES),
    'train': _train_defaults,
    'eval': lambda: to_flat(EvalConfig()),
    'gradcheck': lambda: to_flat(GradcheckConfig()),
    'inspect-graph': lambda: to_flat(InspectConfig()),
}


def _option(group, defaults: Dict[str, str], key: str, help_text: str, **kwargs) -> None:
    """值型选项，默认 None 以便区分“未给出”，帮助信息显示实际默认值"""
    default = defaults[key] or '无'
    group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                       help=f"{help_text} (默认: {default})", **kwargs)


def _switch(group, defaults: Dict[str, str], flag: str, key: str, value: str, help_text: str) -> None:
    """开关型选项：给出时把 key 设为 value"""
    group.add_argument(flag, dest=key, action='store_const', const=value, default=None,
                       help=f"{help_text} (默认: {key}={defaults[key]})")


def _help(group) -> None:
    group.add_argument('-h', '--help', action='help', help="显示帮助并退出")


def _command(sub, name: str, help_text: str, usage: str):
    """添加子命令和通用选项，返回 (子命令解析器, 子命令参数组)"""
    parser = sub.add_parser(name, help=help_text, usage=usage)
    common = parser.add_argument_group('通用选项')
    _help(common)
    common.add_argument('--config', default=None, help="key=value 配置文件，命令行参数优先 (默认: 无)")
    common.add_argument('--out-dir', default='output', help="输出目录 (默认: output)")
    common.add_argument('--verbose', action='store_true', help="输出 DEBUG 日志 (默认: 关闭)")
    common.add_argument('--log-file', action='store_true',
                        help="同时把日志写到 <out-dir>/logs/graphac.log (默认: 关闭)")
    return parser, parser.add_argument_group(f"{name} 参数")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='graphac', usage='%(prog)s [-h] COMMAND ...',
                     description="GraphAC 音频描述：图注意力编码器 + Transformer 解码器")
    sub = parser.add_subparsers(title='子命令', dest='command', metavar='COMMAND', prog='graphac',
                                parser_class=_Parser)
    sub.required = True
    _help(parser.add_argument_group('选项'))

    d = DEFAULTS['gen-data']()
    p, g = _command(sub, 'gen-data', "生成合成事件描述数据集", '%(prog)s [选项]')
    _option(g, d, 'clips', "片段数", type=int)
    _option(g, d, 'events', "事件类型数", type=int)
    _option(g, d, 'mel_bins', "梅尔频带数", type=int)
    _option(g, d, 'frames', "帧数", type=int)
    _option(g, d, 'min_events', "每段最少事件数", type=int)
    _option(g, d, 'max_events', "每段最多事件数", type=int)
    _option(g, d, 'noise', "背景噪声标准差", type=float)
    _option(g, d, 'amplitude', "事件能量幅度", type=float)
    _option(g, d, 'seed', "随机种子", type=int)
    p.set_defaults(handler=_gen_data)

    d = DEFAULTS['train']()
    p, g = _command(sub, 'train', "训练模型并保存检查点", '%(prog)s --data DATA [选项]')
    g.add_argument('--data', required=True, help="数据集目录 (必填)")
    _option(g, d, 'epochs', "训练轮数", type=int)
    _option(g, d, 'batch_size', "批大小", type=int)
    _option(g, d, 'lr', "学习率", type=float)
    _option(g, d, 'label_smoothing', "标签平滑系数", type=float)
    _option(g, d, 'val_ratio', "验证集比例", type=float)
    _option(g, d, 'k', "top-k 保留的邻居数", type=int)
    _switch(g, d, '--no-topk', 'topk', 'false', "关闭 top-k 掩码，使用完整注意力矩阵")
    _switch(g, d, '--no-graph', 'graph', 'false', "关闭图注意力模块（退化为主干网络）")
    _switch(g, d, '--separate-phi', 'share_phi', 'false', "聚合使用独立的 W_agg，而非共享 W_phi")
    _option(g, d, 'leaky_slope', "LeakyReLU 负斜率", type=float)
    _option(g, d, 'channels', "前端各卷积块通道数，逗号分隔")
    _option(g, d, 'pool', "前端各卷积块时间池化因子，逗号分隔")
    _option(g, d, 'layers', "解码器层数", type=int)
    _option(g, d, 'heads', "注意力头数", type=int)
    _option(g, d, 'ff_dim', "前馈层维度", type=int)
    _option(g, d, 'max_len', "最大描述长度", type=int)
    _option(g, d, 'precision', "训练精度", choices=('float32', 'float64'))
    _option(g, d, 'seed', "随机种子", type=int)
    p.set_defaults(handler=_train)

    d = DEFAULTS['eval']()
    p, g = _command(sub, 'eval', "束搜索解码并计算描述指标", '%(prog)s --checkpoint CHECKPOINT --data DATA [选项]')
    g.add_argument('--checkpoint', required=True, help="检查点目录 (必填)")
    g.add_argument('--data', required=True, help="数据集目录 (必填)")
    _option(g, d, 'beam_size', "束宽", type=int)
    _option(g, d, 'workers', "并行解码线程数", type=int)
    _switch(g, d, '--no-length-norm', 'length_norm', 'false', "束搜索不做长度归一化")
    _switch(g, d, '--bleu-smoothing', 'bleu_smoothing', 'true', "BLEU 加一平滑")
    _option(g, d, 'bleu_length', "BLEU 有效参考长度", choices=('closest', 'shortest', 'average'))
    _option(g, d, 'split', "评价的数据划分", choices=('all', 'train', 'val'))
    p.set_defaults(handler=_eval)

    d = DEFAULTS['gradcheck']()
    p, g = _command(sub, 'gradcheck', "中心差分梯度检查", '%(prog)s [选项]')
    _option(g, d, 'module', "检查的模块", choices=GRADCHECK_MODULES)
    _option(g, d, 'step', "差分步长 h", type=float)
    _option(g, d, 'tolerance', "相对误差阈值", type=float)
    _option(g, d, 'seed', "随机种子", type=int)
    p.set_defaults(handler=_gradcheck)

    d = DEFAULTS['inspect-graph']()
    p, g = _command(sub, 'inspect-graph', "导出片段的邻接图和热力图",
                    '%(prog)s --checkpoint CHECKPOINT --data DATA --clip CLIP [选项]')
    g.add_argument('--checkpoint', required=True, help="检查点目录 (必填)")
    g.add_argument('--data', required=True, help="数据集目录 (必填)")
    _option(g, d, 'clip', "片段 id")
    _option(g, d, 'interp', "双线性插值放大倍数", type=int)
    _switch(g, d, '--export-mel', 'export_mel', 'true', "同时导出梅尔谱热力图 <id>_mel.pgm")
    p.set_defaults(handler=_inspect_graph)
    return parser


def setup_logging(verbose: bool, log_file: Optional[Path] = None) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format=LOG_FORMAT, handlers=handlers, force=True)


def resolve(args: argparse.Namespace) -> Dict[str, str]:
    """默认值 < --config 文件 < 命令行"""
    defaults = DEFAULTS[args.command]()
    file_values = read_config_file(args.config, defaults) if args.config else {}
    overrides = {key: (None if getattr(args, key, None) is None else str(getattr(args, key)))
                 for key in defaults}
    return merge_values(defaults, file_values, overrides)


def _echo(values: Dict[str, str], **extra) -> None:
    print(format_config({**{k: str(v) for k, v in extra.items()}, **values}))
    sys.stdout.flush()


def _existing_dir(path: str, flag: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise ValidationError(f"{flag} 指定的目录不存在: {path}")
    return path


def _gen_data(args, values: Dict[str, str], paths: PathService) -> int:
    spec = apply_flat(SyntheticSpec(), values, SYNTHETIC_ALIASES)
    _echo(values, out_dir=args.out_dir)
    clips = DatasetController(paths).generate(spec)
    print(f"已生成 {len(clips)} 个片段 -> {paths.output_directory}")
    return 0


def _train(args, values: Dict[str, str], paths: PathService) -> int:
    data = _existing_dir(args.data, '--data')
    model_config, train_config = configs_from_flat(values)
    train_config.validate()
    _echo(values, data=data, out_dir=args.out_dir)
    clips = DatasetController(paths).load(data)
    report, _ = TrainingController(paths).train(model_config, train_config, clips)
    last = report.epochs[-1]
    print(f"train_loss={last.train_loss:.6f} val_loss={last.val_loss:.6f} "
          f"val_accuracy={last.val_accuracy:.4f}")
    print(f"checkpoint: {report.checkpoint_path}")
    return 0


def _eval(args, values: Dict[str, str], paths: PathService) -> int:
    checkpoint = _existing_dir(args.checkpoint, '--checkpoint')
    data = _existing_dir(args.data, '--data')
    config = apply_flat(EvalConfig(), values)
    _echo(values, checkpoint=checkpoint, data=data, out_dir=args.out_dir)
    model, train_config = load_checkpoint(checkpoint)
    clips = select_split(DatasetController(paths).load(data), config.split,
                         train_config.val_ratio, model.config.seed)
    report = EvaluationController(paths).evaluate(model, clips, config)
    print(report.to_table())
    return 0


def _gradcheck(args, values: Dict[str, str], paths: PathService) -> int:
    config = apply_flat(GradcheckConfig(), values)
    _echo(values, out_dir=args.out_dir)
    controller = GradcheckController()
    results = controller.run(config)
    for name, err in results.items():
        verdict = 'PASS' if err < config.tolerance else 'FAIL'
        print(f"{name}: max relative error {err:.3e} ({verdict}, tolerance {config.tolerance:g})")
    controller.verify(results, config.tolerance)
    return 0


def _inspect_graph(args, values: Dict[str, str], paths: PathService) -> int:
    checkpoint = _existing_dir(args.checkpoint, '--checkpoint')
    data = _existing_dir(args.data, '--data')
    config = apply_flat(InspectConfig(), values)
    _echo(values, checkpoint=checkpoint, data=data, out_dir=args.out_dir)
    model, _ = load_checkpoint(checkpoint)
    clips = DatasetController(paths).load(data)
    written = EvaluationController(paths).export_adjacency(model, clips, config)
    for path in written.values():
        if path:
            print(path)
    return 0


def run(argv: Optional[List[str]] = None) -> int:
    """
    解析并执行一条命令

    Args:
        argv: 命令行参数（不含程序名），默认取 sys.argv[1:]

    Returns:
        退出码
    """
    try:
        args = build_parser().parse_args(argv)
        values = resolve(args)
        paths = PathService(args.out_dir)
        setup_logging(args.verbose, paths.log_file if args.log_file else None)
        return args.handler(args, values, paths)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except ValidationError as e:
        print(f"错误: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"运行失败: {type(e).__name__}: {e}")
        print(f"运行失败: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
