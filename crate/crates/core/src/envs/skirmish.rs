//! Grid-world team skirmish with partial observability.
//!
//! Allies (the learning agents) spawn on the west edge, enemies on the east
//! edge. Each step resolves in a fixed order: ally moves, ally attacks,
//! scripted enemy moves and attacks, cooldown tick, reward. Positions are
//! integer cells and distances are Euclidean between cell centres.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{Environment, StepOutcome, TabularModel};
use crate::error::{Error, Result};
use crate::kv::{parse_bool, KvFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Team {
    Ally,
    Enemy,
}

/// Ranged "marine" analogue and melee "zealot" analogue with a shield.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitType {
    Marine,
    Zealot,
}

impl UnitType {
    fn code(self) -> f64 {
        match self {
            UnitType::Marine => 0.0,
            UnitType::Zealot => 1.0,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "marine" | "m" => Some(UnitType::Marine),
            "zealot" | "z" => Some(UnitType::Zealot),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnitType::Marine => "marine",
            UnitType::Zealot => "zealot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitStats {
    pub health: i32,
    pub shield: i32,
    pub damage: i32,
    pub range: f64,
    pub cooldown: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Unit {
    pub team: Team,
    pub unit_type: UnitType,
    pub x: i32,
    pub y: i32,
    pub health: i32,
    pub shield: i32,
    pub cooldown: u32,
}

impl Unit {
    pub fn alive(&self) -> bool {
        self.health > 0
    }

    fn distance(&self, other: &Unit) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Complete simulator state. Allies occupy the first slots, enemies the
/// rest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub units: Vec<Unit>,
    pub timestep: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, 1),
            Direction::South => (0, -1),
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
        }
    }
}

/// Decoded action. Attack targets index the opposing team.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Move(Direction),
    Attack(usize),
    Stop,
    Noop,
}

/// One unit as seen by an observer, normalised by the field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitView {
    pub unit: usize,
    pub team: Team,
    pub distance: f64,
    pub rel_x: f64,
    pub rel_y: f64,
    pub unit_type: f64,
    pub shield: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub agent: usize,
    pub last_action: Option<usize>,
    pub visible: Vec<UnitView>,
}

const OBS_FEATURES: usize = 6;
const STATE_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct SkirmishConfig {
    pub width: i32,
    pub height: i32,
    pub allies: Vec<UnitType>,
    pub enemies: Vec<UnitType>,
    pub marine: UnitStats,
    pub zealot: UnitStats,
    pub fov: f64,
    pub max_steps: usize,
    pub kill_bonus: f64,
    pub win_bonus: f64,
    pub damage_taken_weight: f64,
    /// Maximum per-axis offset applied to each team's spawn formation.
    pub spawn_jitter: i32,
    /// Maximum absolute integer noise added to each hit.
    pub damage_noise: i32,
    /// When false, every action is selectable and invalid attacks resolve
    /// as no-ops. When true, unavailable attacks are masked out.
    pub mask_unavailable: bool,
    pub seed: u64,
}

impl Default for SkirmishConfig {
    fn default() -> Self {
        Self {
            width: 12,
            height: 7,
            allies: vec![UnitType::Marine; 3],
            enemies: vec![UnitType::Marine; 3],
            marine: UnitStats {
                health: 40,
                shield: 0,
                damage: 10,
                range: 3.0,
                cooldown: 1,
            },
            zealot: UnitStats {
                health: 50,
                shield: 30,
                damage: 16,
                range: 1.5,
                cooldown: 2,
            },
            fov: 3.0,
            max_steps: 60,
            kill_bonus: 10.0,
            win_bonus: 200.0,
            damage_taken_weight: 0.5,
            spawn_jitter: 1,
            damage_noise: 0,
            mask_unavailable: false,
            seed: 0,
        }
    }
}

fn parse_roster(value: &str) -> Option<Vec<UnitType>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(UnitType::parse)
        .collect()
}

impl SkirmishConfig {
    pub fn stats(&self, unit_type: UnitType) -> &UnitStats {
        match unit_type {
            UnitType::Marine => &self.marine,
            UnitType::Zealot => &self.zealot,
        }
    }

    /// `|U| = 4 moves + one attack per enemy + stop + noop`.
    pub fn num_actions(&self) -> usize {
        4 + self.enemies.len() + 2
    }

    pub fn obs_size(&self) -> usize {
        (self.allies.len() - 1 + self.enemies.len()) * OBS_FEATURES
    }

    pub fn state_size(&self) -> usize {
        (self.allies.len() + self.enemies.len()) * STATE_FEATURES + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.allies.is_empty() || self.enemies.is_empty() {
            return Err(Error::config("both teams need at least one unit"));
        }
        if self.width <= 0 || self.height <= 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        let tallest = self.allies.len().max(self.enemies.len()) as i32;
        if tallest > self.height {
            return Err(Error::config(format!(
                "a team of {tallest} does not fit a grid of height {}",
                self.height
            )));
        }
        if self.width < 2 {
            return Err(Error::config("grid needs at least two columns"));
        }
        if self.fov <= 0.0 || self.max_steps == 0 {
            return Err(Error::config("fov and max_steps must be positive"));
        }
        for stats in [&self.marine, &self.zealot] {
            if stats.health <= 0 || stats.shield < 0 || stats.damage < 0 || stats.range <= 0.0 {
                return Err(Error::config("unit stats must be positive"));
            }
        }
        if self.spawn_jitter < 0 || self.damage_noise < 0 {
            return Err(Error::config("jitter and noise must be non-negative"));
        }
        Ok(())
    }

    /// Reads the flat key-value scenario format. Unknown keys are errors.
    pub fn from_kv(file: &KvFile) -> Result<Self> {
        let mut cfg = SkirmishConfig::default();
        for e in &file.entries {
            match e.key.as_str() {
                "kind" => {
                    if e.value != "skirmish" {
                        return Err(file.error(e, format!("unknown scenario kind `{}`", e.value)));
                    }
                }
                "width" => cfg.width = file.value(e)?,
                "height" => cfg.height = file.value(e)?,
                "allies" => {
                    cfg.allies = parse_roster(&e.value)
                        .ok_or_else(|| file.error(e, format!("invalid roster `{}`", e.value)))?
                }
                "enemies" => {
                    cfg.enemies = parse_roster(&e.value)
                        .ok_or_else(|| file.error(e, format!("invalid roster `{}`", e.value)))?
                }
                "fov" => cfg.fov = file.value(e)?,
                "max_steps" => cfg.max_steps = file.value(e)?,
                "kill_bonus" => cfg.kill_bonus = file.value(e)?,
                "win_bonus" => cfg.win_bonus = file.value(e)?,
                "damage_taken_weight" => cfg.damage_taken_weight = file.value(e)?,
                "spawn_jitter" => cfg.spawn_jitter = file.value(e)?,
                "damage_noise" => cfg.damage_noise = file.value(e)?,
                "seed" => cfg.seed = file.value(e)?,
                "mask_unavailable" => {
                    cfg.mask_unavailable = parse_bool(&e.value)
                        .ok_or_else(|| file.error(e, format!("invalid boolean `{}`", e.value)))?
                }
                key => {
                    let Some((unit, stat)) = key.split_once('.') else {
                        return Err(file.error(e, format!("unknown key `{key}`")));
                    };
                    let stats = match unit {
                        "marine" => &mut cfg.marine,
                        "zealot" => &mut cfg.zealot,
                        _ => return Err(file.error(e, format!("unknown key `{key}`"))),
                    };
                    match stat {
                        "health" => stats.health = file.value(e)?,
                        "shield" => stats.shield = file.value(e)?,
                        "damage" => stats.damage = file.value(e)?,
                        "range" => stats.range = file.value(e)?,
                        "cooldown" => stats.cooldown = file.value(e)?,
                        _ => return Err(file.error(e, format!("unknown key `{key}`"))),
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }
}

/// Decoded action for an agent of a team facing `opponents` units.
pub fn decode_action(action: usize, opponents: usize) -> Option<ActionKind> {
    match action {
        0..=3 => Some(ActionKind::Move(Direction::ALL[action])),
        a if a < 4 + opponents => Some(ActionKind::Attack(a - 4)),
        a if a == 4 + opponents => Some(ActionKind::Stop),
        a if a == 5 + opponents => Some(ActionKind::Noop),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct SkirmishEnv {
    config: SkirmishConfig,
    state: GlobalState,
    rng: ChaCha8Rng,
    last_actions: Vec<Option<usize>>,
    ally_centroid: (f64, f64),
    done: bool,
}

/// Full result of [`SkirmishEnv::step`].
#[derive(Debug, Clone)]
pub struct SkirmishStep {
    pub state: GlobalState,
    pub observations: Vec<Observation>,
    pub outcome: StepOutcome,
}

impl SkirmishEnv {
    pub fn new(config: SkirmishConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut env = Self {
            state: GlobalState {
                units: Vec::new(),
                timestep: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_actions: vec![None; config.allies.len()],
            ally_centroid: (0.0, 0.0),
            done: true,
            config,
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn config(&self) -> &SkirmishConfig {
        &self.config
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn num_allies(&self) -> usize {
        self.config.allies.len()
    }

    pub fn num_enemies(&self) -> usize {
        self.config.enemies.len()
    }

    fn enemy_slot(&self, j: usize) -> usize {
        self.num_allies() + j
    }

    fn spawn_column(&self) -> i32 {
        if self.config.width >= 5 {
            1
        } else {
            0
        }
    }

    pub fn reset(&mut self, seed: u64) -> Result<(GlobalState, Vec<Observation>)> {
        self.config.validate()?;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = self.config.spawn_jitter;
        let mut units = Vec::new();
        let ally_x = self.spawn_column();
        let enemy_x = self.config.width - 1 - ally_x;
        for (team, roster, x) in [
            (Team::Ally, self.config.allies.clone(), ally_x),
            (Team::Enemy, self.config.enemies.clone(), enemy_x),
        ] {
            let k = roster.len() as i32;
            let base_y = (self.config.height - k) / 2;
            let (dx, dy) = if jitter > 0 {
                (
                    self.rng.gen_range(-jitter..=jitter),
                    self.rng.gen_range(-jitter..=jitter),
                )
            } else {
                (0, 0)
            };
            let dy = dy.clamp(-base_y, self.config.height - k - base_y);
            let x = (x + dx).clamp(0, self.config.width - 1);
            for (i, unit_type) in roster.into_iter().enumerate() {
                let stats = self.config.stats(unit_type);
                units.push(Unit {
                    team,
                    unit_type,
                    x,
                    y: base_y + dy + i as i32,
                    health: stats.health,
                    shield: stats.shield,
                    cooldown: 0,
                });
            }
        }
        let n = self.num_allies();
        let (sx, sy) = units[..n]
            .iter()
            .fold((0.0, 0.0), |(a, b), u| (a + u.x as f64, b + u.y as f64));
        self.ally_centroid = (sx / n as f64, sy / n as f64);
        self.state = GlobalState { units, timestep: 0 };
        self.last_actions = vec![None; n];
        self.done = false;
        Ok((self.state.clone(), self.observations()))
    }

    /// Overwrites the simulator state, keeping the generator. Used by
    /// enumeration.
    pub fn set_state(&mut self, state: GlobalState) {
        self.done = false;
        self.state = state;
    }

    fn occupied(&self, x: i32, y: i32) -> bool {
        self.state
            .units
            .iter()
            .any(|u| u.alive() && u.x == x && u.y == y)
    }

    fn try_move(&mut self, slot: usize, dir: Direction) {
        let (dx, dy) = dir.delta();
        let (x, y) = (self.state.units[slot].x + dx, self.state.units[slot].y + dy);
        if x < 0 || y < 0 || x >= self.config.width || y >= self.config.height || self.occupied(x, y) {
            return;
        }
        self.state.units[slot].x = x;
        self.state.units[slot].y = y;
    }

    /// Resolves one attack. Returns `(damage dealt, killed)`.
    fn try_attack(&mut self, attacker: usize, target: usize) -> (i32, bool) {
        let (a, t) = (&self.state.units[attacker], &self.state.units[target]);
        let stats = *self.config.stats(a.unit_type);
        if !a.alive() || !t.alive() || a.cooldown > 0 || a.distance(t) > stats.range + 1e-9 {
            return (0, false);
        }
        let mut damage = stats.damage;
        if self.config.damage_noise > 0 {
            let noise = self.config.damage_noise;
            damage = (damage + self.rng.gen_range(-noise..=noise)).max(0);
        }
        self.state.units[attacker].cooldown = stats.cooldown;
        let target = &mut self.state.units[target];
        let absorbed = damage.min(target.shield);
        target.shield -= absorbed;
        let to_health = (damage - absorbed).min(target.health);
        target.health -= to_health;
        (absorbed + to_health, !target.alive())
    }

    /// Scripted opponent: attack the lowest-health ally in weapon range
    /// (ties to the lower index), otherwise walk toward the nearest visible
    /// ally, otherwise toward the allies' spawn centroid.
    pub fn enemy_policy(&self, state: &GlobalState) -> Vec<ActionKind> {
        let n = self.num_allies();
        state.units[n..]
            .iter()
            .map(|enemy| {
                if !enemy.alive() {
                    return ActionKind::Noop;
                }
                let range = self.config.stats(enemy.unit_type).range;
                let visible: Vec<(usize, f64)> = state.units[..n]
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.alive())
                    .map(|(i, a)| (i, enemy.distance(a)))
                    .filter(|&(_, d)| d <= self.config.fov + 1e-9)
                    .collect();
                let target = visible
                    .iter()
                    .filter(|&&(_, d)| d <= range + 1e-9)
                    .min_by_key(|&&(i, _)| (state.units[i].health, i));
                if let Some(&(i, _)) = target {
                    return ActionKind::Attack(i);
                }
                let goal = visible
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .map(|&(i, _)| (state.units[i].x as f64, state.units[i].y as f64))
                    .unwrap_or(self.ally_centroid);
                step_toward(enemy, goal)
            })
            .collect()
    }

    /// Decentralised focus-fire heuristic computed from one observation:
    /// attack the lowest-index visible enemy, otherwise advance east.
    pub fn ally_heuristic(&self, obs: &Observation) -> usize {
        if !self.state.units[obs.agent].alive() {
            return self.noop();
        }
        obs.visible
            .iter()
            .filter(|v| v.team == Team::Enemy)
            .map(|v| v.unit - self.num_allies())
            .min()
            .map(|j| 4 + j)
            .unwrap_or(2)
    }

    fn noop(&self) -> usize {
        5 + self.num_enemies()
    }

    pub fn observe(&self, agent: usize) -> Observation {
        let me = &self.state.units[agent];
        let mut visible = Vec::new();
        if me.alive() {
            for (i, u) in self.state.units.iter().enumerate() {
                if i == agent || !u.alive() {
                    continue;
                }
                let d = me.distance(u);
                if d > self.config.fov + 1e-9 {
                    continue;
                }
                let max_shield = self.config.stats(u.unit_type).shield;
                visible.push(UnitView {
                    unit: i,
                    team: u.team,
                    distance: d / self.config.fov,
                    rel_x: (u.x - me.x) as f64 / self.config.fov,
                    rel_y: (u.y - me.y) as f64 / self.config.fov,
                    unit_type: u.unit_type.code(),
                    shield: if max_shield > 0 {
                        u.shield as f64 / max_shield as f64
                    } else {
                        0.0
                    },
                });
            }
        }
        Observation {
            agent,
            last_action: self.last_actions[agent],
            visible,
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.num_allies()).map(|a| self.observe(a)).collect()
    }

    /// Fixed-length encoding: one block per other unit (allies first),
    /// zeros when the unit is out of view.
    pub fn encode_observation(&self, obs: &Observation) -> Vec<f64> {
        let mut features = vec![0.0; self.config.obs_size()];
        for v in &obs.visible {
            let slot = if v.unit < obs.agent { v.unit } else { v.unit - 1 };
            let block = &mut features[slot * OBS_FEATURES..(slot + 1) * OBS_FEATURES];
            block.copy_from_slice(&[1.0, v.distance, v.rel_x, v.rel_y, v.unit_type, v.shield]);
        }
        features
    }

    pub fn encode_state(&self) -> Vec<f64> {
        let half_w = (self.config.width as f64 / 2.0).max(1.0);
        let half_h = (self.config.height as f64 / 2.0).max(1.0);
        let cx = (self.config.width - 1) as f64 / 2.0;
        let cy = (self.config.height - 1) as f64 / 2.0;
        let mut out = Vec::with_capacity(self.config.state_size());
        for u in &self.state.units {
            let stats = self.config.stats(u.unit_type);
            if !u.alive() {
                out.extend_from_slice(&[0.0; STATE_FEATURES]);
                continue;
            }
            out.extend_from_slice(&[
                1.0,
                (u.x as f64 - cx) / half_w,
                (u.y as f64 - cy) / half_h,
                u.unit_type.code(),
                u.health as f64 / stats.health as f64,
                if stats.cooldown > 0 {
                    u.cooldown as f64 / stats.cooldown as f64
                } else {
                    0.0
                },
                if stats.shield > 0 {
                    u.shield as f64 / stats.shield as f64
                } else {
                    0.0
                },
            ]);
        }
        out.push(self.state.timestep as f64 / self.config.max_steps as f64);
        out
    }

    /// True availability: moves, stop and noop always; attacks only on
    /// living enemies inside the field of view. Dead agents may only noop.
    pub fn availability(&self, agent: usize) -> Vec<bool> {
        let m = self.num_enemies();
        let me = &self.state.units[agent];
        let mut mask = vec![false; self.config.num_actions()];
        if !me.alive() {
            mask[self.noop()] = true;
            return mask;
        }
        for slot in mask.iter_mut().take(4) {
            *slot = true;
        }
        for j in 0..m {
            let e = &self.state.units[self.enemy_slot(j)];
            mask[4 + j] = e.alive() && me.distance(e) <= self.config.fov + 1e-9;
        }
        mask[4 + m] = true;
        mask[5 + m] = true;
        mask
    }

    pub fn team_health(&self, team: Team) -> i32 {
        self.state
            .units
            .iter()
            .filter(|u| u.team == team)
            .map(|u| u.health + u.shield)
            .sum()
    }

    fn advance(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::usage("step called after the episode ended"));
        }
        let n = self.num_allies();
        let m = self.num_enemies();
        if actions.len() != n {
            return Err(Error::usage(format!(
                "expected {n} actions, got {}",
                actions.len()
            )));
        }
        let mut decoded = Vec::with_capacity(n);
        for (agent, &a) in actions.iter().enumerate() {
            let kind = decode_action(a, m).ok_or_else(|| {
                Error::usage(format!("action {a} out of range for agent {agent}"))
            })?;
            if !self.state.units[agent].alive() && kind != ActionKind::Noop {
                return Err(Error::usage(format!("dead agent {agent} must noop")));
            }
            decoded.push(kind);
        }

        self.state.timestep += 1;
        for (agent, kind) in decoded.iter().enumerate() {
            if let ActionKind::Move(dir) = *kind {
                self.try_move(agent, dir);
            }
        }
        let mut inflicted = 0;
        let mut kills = 0;
        for (agent, kind) in decoded.iter().enumerate() {
            if let ActionKind::Attack(j) = *kind {
                let (dealt, killed) = self.try_attack(agent, self.enemy_slot(j));
                inflicted += dealt;
                kills += killed as i32;
            }
        }

        let enemy_actions = self.enemy_policy(&self.state.clone());
        for (j, kind) in enemy_actions.iter().enumerate() {
            if let ActionKind::Move(dir) = *kind {
                self.try_move(self.enemy_slot(j), dir);
            }
        }
        let mut taken = 0;
        for (j, kind) in enemy_actions.iter().enumerate() {
            if let ActionKind::Attack(i) = *kind {
                taken += self.try_attack(self.enemy_slot(j), i).0;
            }
        }

        for u in self.state.units.iter_mut().filter(|u| u.alive()) {
            u.cooldown = u.cooldown.saturating_sub(1);
        }
        for (agent, &a) in actions.iter().enumerate() {
            self.last_actions[agent] = Some(a);
        }

        let allies_alive = self.state.units[..n].iter().any(Unit::alive);
        let enemies_alive = self.state.units[n..].iter().any(Unit::alive);
        let win = !enemies_alive;
        let lost = !allies_alive;
        let timeout = !win && !lost && self.state.timestep >= self.config.max_steps;
        let mut reward = inflicted as f64 - self.config.damage_taken_weight * taken as f64
            + self.config.kill_bonus * kills as f64;
        if win {
            let remaining: i32 = self.state.units[..n].iter().map(|u| u.health).sum();
            reward += remaining as f64 + self.config.win_bonus;
        }
        self.done = win || lost || timeout;
        Ok(StepOutcome {
            reward,
            terminal: self.done,
            win,
            timeout,
        })
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<SkirmishStep> {
        let outcome = self.advance(actions)?;
        Ok(SkirmishStep {
            state: self.state.clone(),
            observations: self.observations(),
            outcome,
        })
    }
}

fn step_toward(unit: &Unit, goal: (f64, f64)) -> ActionKind {
    let dx = goal.0 - unit.x as f64;
    let dy = goal.1 - unit.y as f64;
    if dx.abs() < 0.5 && dy.abs() < 0.5 {
        return ActionKind::Stop;
    }
    let dir = if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            Direction::East
        } else {
            Direction::West
        }
    } else if dy > 0.0 {
        Direction::North
    } else {
        Direction::South
    };
    ActionKind::Move(dir)
}

impl Environment for SkirmishEnv {
    fn num_agents(&self) -> usize {
        self.num_allies()
    }

    fn num_actions(&self) -> usize {
        self.config.num_actions()
    }

    fn obs_size(&self) -> usize {
        self.config.obs_size()
    }

    fn state_size(&self) -> usize {
        self.config.state_size()
    }

    fn episode_limit(&self) -> usize {
        self.config.max_steps
    }

    fn reset_episode(&mut self, seed: u64) -> Result<()> {
        self.reset(seed).map(|_| ())
    }

    fn step_joint(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        self.advance(actions)
    }

    fn observation_features(&self, agent: usize) -> Vec<f64> {
        self.encode_observation(&self.observe(agent))
    }

    fn state_features(&self) -> Vec<f64> {
        self.encode_state()
    }

    fn action_mask(&self, agent: usize) -> Vec<bool> {
        if self.config.mask_unavailable || !self.state.units[agent].alive() {
            self.availability(agent)
        } else {
            vec![true; self.config.num_actions()]
        }
    }

    fn agent_alive(&self, agent: usize) -> bool {
        self.state.units[agent].alive()
    }

    fn noop_action(&self) -> usize {
        self.noop()
    }

    fn heuristic_actions(&self) -> Vec<usize> {
        self.observations()
            .iter()
            .map(|o| self.ally_heuristic(o))
            .collect()
    }

    /// Breadth-first enumeration of every state reachable from the
    /// configured spawn. Requires deterministic dynamics (no jitter, no
    /// damage noise). Dead agents' actions are replaced by noop.
    fn enumerate(&self, cap: usize) -> Result<TabularModel> {
        if self.config.spawn_jitter != 0 || self.config.damage_noise != 0 {
            return Err(Error::capability(
                "only deterministic skirmish configurations can be enumerated",
            ));
        }
        let n = self.num_allies();
        let u = self.config.num_actions();
        let joint = u
            .checked_pow(n as u32)
            .ok_or_else(|| Error::capability("joint action space overflows"))?;
        let mut root = self.clone();
        let (start, _) = root.reset(self.config.seed)?;

        let mut index: HashMap<GlobalState, usize> = HashMap::new();
        let mut states = vec![start.clone()];
        index.insert(start, 0);
        // (state, joint) -> next state or None for terminal, plus reward
        let mut edges: Vec<(Option<usize>, f64)> = Vec::new();
        let mut cursor = 0;
        while cursor < states.len() {
            if states.len().saturating_mul(joint) > cap {
                return Err(Error::capability(format!(
                    "more than {cap} state-joint-action pairs"
                )));
            }
            let state = states[cursor].clone();
            for ja in 0..joint {
                let mut actions = Vec::with_capacity(n);
                let mut rest = ja;
                for _ in 0..n {
                    actions.push(rest % u);
                    rest /= u;
                }
                actions.reverse();
                for (agent, a) in actions.iter_mut().enumerate() {
                    if !state.units[agent].alive() {
                        *a = self.noop();
                    }
                }
                let mut sim = root.clone();
                sim.set_state(state.clone());
                let out = sim.advance(&actions)?;
                let next = if out.terminal {
                    None
                } else {
                    let len = states.len();
                    let id = *index.entry(sim.state.clone()).or_insert(len);
                    if id == len {
                        states.push(sim.state.clone());
                    }
                    Some(id)
                };
                edges.push((next, out.reward));
            }
            cursor += 1;
        }

        let s_count = states.len();
        let width = s_count + 1;
        let mut transitions = vec![0.0; s_count * joint * width];
        let mut rewards = vec![0.0; s_count * joint];
        for (k, (next, r)) in edges.into_iter().enumerate() {
            transitions[k * width + next.unwrap_or(s_count)] = 1.0;
            rewards[k] = r;
        }
        let mut initial = vec![0.0; s_count];
        initial[0] = 1.0;
        TabularModel::new(s_count, n, u, initial, transitions, rewards)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic() -> SkirmishConfig {
        SkirmishConfig {
            spawn_jitter: 0,
            ..SkirmishConfig::default()
        }
    }

    /// Places allies and enemies at explicit cells.
    fn staged(cfg: SkirmishConfig, allies: &[(i32, i32)], enemies: &[(i32, i32)]) -> SkirmishEnv {
        let mut env = SkirmishEnv::new(cfg).unwrap();
        for (i, &(x, y)) in allies.iter().chain(enemies).enumerate() {
            env.state.units[i].x = x;
            env.state.units[i].y = y;
        }
        env
    }

    #[test]
    fn action_count_matches_formula() {
        let cfg = SkirmishConfig::default();
        assert_eq!(cfg.num_actions(), 4 + 3 + 2);
    }

    #[test]
    fn same_seed_same_start() {
        let mut a = SkirmishEnv::new(SkirmishConfig::default()).unwrap();
        let mut b = a.clone();
        let ra = a.reset(17).unwrap();
        let rb = b.reset(17).unwrap();
        assert_eq!(ra.0, rb.0);
        assert_eq!(ra.1, rb.1);
    }

    #[test]
    fn default_spawn_sees_no_enemies() {
        let mut env = SkirmishEnv::new(SkirmishConfig::default()).unwrap();
        for seed in 0..50 {
            let (_, obs) = env.reset(seed).unwrap();
            for o in obs {
                assert!(o.visible.iter().all(|v| v.team == Team::Ally));
            }
        }
    }

    #[test]
    fn idle_step_far_from_enemies_pays_nothing() {
        let mut env = SkirmishEnv::new(deterministic()).unwrap();
        let noop = env.noop_action();
        let out = env.step(&[noop; 3]).unwrap();
        assert_eq!(out.outcome.reward, 0.0);
        assert!(!out.outcome.terminal);
    }

    #[test]
    fn single_hit_reward_equals_damage() {
        let cfg = SkirmishConfig {
            fov: 3.0,
            ..deterministic()
        };
        // ally 0 next to enemy 0; enemies face away out of their own reach
        let mut env = staged(cfg, &[(3, 3), (0, 0), (0, 6)], &[(6, 3), (11, 0), (11, 6)]);
        // enemy 0 sees ally 0 at distance 3 and would shoot back; stun it
        env.state.units[3].cooldown = 5;
        let noop = env.noop_action();
        let out = env.step(&[4, noop, noop]).unwrap();
        assert_eq!(out.outcome.reward, 10.0);
        assert_eq!(out.state.units[3].health, 30);
    }

    #[test]
    fn killing_last_enemy_pays_kill_and_win_bonus() {
        let cfg = SkirmishConfig {
            allies: vec![UnitType::Marine],
            enemies: vec![UnitType::Marine],
            ..deterministic()
        };
        let mut env = staged(cfg, &[(3, 3)], &[(5, 3)]);
        env.state.units[1].health = 10;
        let out = env.step(&[4]).unwrap();
        let full = env.config.marine.health as f64;
        assert!(out.outcome.terminal && out.outcome.win);
        assert_eq!(out.outcome.reward, 10.0 + 10.0 + full + 200.0);
    }

    #[test]
    fn invalid_attack_is_a_no_op() {
        let mut env = SkirmishEnv::new(deterministic()).unwrap();
        let before = env.state.clone();
        let noop = env.noop_action();
        let out = env.step(&[4, 5, noop]).unwrap();
        assert_eq!(out.outcome.reward, 0.0);
        assert_eq!(out.state.units[..3], before.units[..3]);
    }

    #[test]
    fn usage_errors() {
        let mut env = SkirmishEnv::new(deterministic()).unwrap();
        assert!(matches!(env.step(&[99, 0, 0]), Err(Error::Usage(_))));
        env.state.units[0].health = 0;
        assert!(matches!(env.step(&[0, 0, 0]), Err(Error::Usage(_))));
    }

    #[test]
    fn enemies_advance_on_ally_centroid_when_blind() {
        let env = SkirmishEnv::new(deterministic()).unwrap();
        let actions = env.enemy_policy(env.state());
        assert!(actions.iter().all(|a| *a == ActionKind::Move(Direction::West)));
    }

    #[test]
    fn enemy_targets_weakest_then_lowest_index() {
        let mut env = staged(deterministic(), &[(5, 3), (6, 4), (0, 0)], &[(6, 3), (11, 0), (11, 6)]);
        env.state.units[0].health = 40;
        env.state.units[1].health = 30;
        assert_eq!(env.enemy_policy(env.state())[0], ActionKind::Attack(1));
        env.state.units[1].health = 40;
        assert_eq!(env.enemy_policy(env.state())[0], ActionKind::Attack(0));
    }

    #[test]
    fn heuristic_moves_east_then_focuses_lowest_index() {
        let env = SkirmishEnv::new(deterministic()).unwrap();
        assert_eq!(env.heuristic_actions(), vec![2, 2, 2]);

        let cfg = SkirmishConfig {
            enemies: vec![UnitType::Marine; 5],
            height: 9,
            ..deterministic()
        };
        let env = staged(cfg, &[(4, 4), (0, 0), (0, 8)], &[(11, 0), (6, 4), (11, 8), (5, 5), (11, 2)]);
        let obs = env.observe(0);
        // enemies 1 and 3 are visible (0-based), i.e. enemy_2 and enemy_4
        assert_eq!(env.ally_heuristic(&obs), 4 + 1);
    }

    #[test]
    fn observations_respect_fov() {
        let mut env = SkirmishEnv::new(SkirmishConfig::default()).unwrap();
        let noop = env.noop_action();
        for seed in 0..5 {
            env.reset(seed).unwrap();
            loop {
                for o in env.observations() {
                    assert!(o.visible.iter().all(|v| v.distance <= 1.0 + 1e-12));
                }
                let acts = env.heuristic_actions();
                let acts: Vec<usize> = acts
                    .into_iter()
                    .enumerate()
                    .map(|(a, u)| if env.agent_alive(a) { u } else { noop })
                    .collect();
                if env.step_joint(&acts).unwrap().terminal {
                    break;
                }
            }
        }
    }

    #[test]
    fn parses_scenario_and_reports_bad_lines() {
        let text = "kind = skirmish\nallies = marine, zealot\nenemies = marine,marine\nzealot.shield = 20\n";
        let cfg = SkirmishConfig::from_kv(&KvFile::parse("s", text).unwrap()).unwrap();
        assert_eq!(cfg.allies, vec![UnitType::Marine, UnitType::Zealot]);
        assert_eq!(cfg.zealot.shield, 20);
        let bad = KvFile::parse("s", "width = 5\nbogus.key = 3\n").unwrap();
        match SkirmishConfig::from_kv(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e:?}"),
        }
        let empty = KvFile::parse("s", "allies = \n").unwrap();
        assert!(SkirmishConfig::from_kv(&empty).unwrap_err().is_config());
    }

    #[test]
    fn shields_absorb_first() {
        let cfg = SkirmishConfig {
            allies: vec![UnitType::Marine],
            enemies: vec![UnitType::Zealot],
            ..deterministic()
        };
        let mut env = staged(cfg, &[(3, 3)], &[(6, 3)]);
        let out = env.step(&[4]).unwrap();
        let z = &out.state.units[1];
        assert_eq!(z.shield, 20);
        assert_eq!(z.health, 50);
    }
}
